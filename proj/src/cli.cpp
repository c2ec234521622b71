/*
 * Copyright (c) 2026, The mgbert Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mgbert/cli.hpp"

#include "mgbert/bench.hpp"
#include "mgbert/checkpoint.hpp"
#include "mgbert/context_extension.hpp"
#include "mgbert/data_pipeline.hpp"
#include "mgbert/error.hpp"
#include "mgbert/llm2vec.hpp"
#include "mgbert/niah.hpp"
#include "mgbert/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace mgbert
{

namespace
{

struct Common
{
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

void add_common(CLI::App* sub, Common& c)
{
    sub->add_option("--config", c.config, "key = value config file");
    sub->add_option("--seed", c.seed, "random seed (overrides config key 'seed')");
    sub->add_option("--out", c.out, "output directory")->capture_default_str();
}

/// Settings resolved as flag > config file > default.
class Settings
{
public:
    Settings(Common const& c)
        : mCommon(c)
    {
        if (!c.config.empty())
        {
            mKv = KeyValueFile::load(c.config);
        }
        mSeed = mKv.take_uint("seed", 0);
    }

    KeyValueFile& kv()
    {
        return mKv;
    }

    std::uint64_t seed() const
    {
        return mCommon.seed ? *mCommon.seed : mSeed;
    }

    /// Call once every key the subcommand understands has been read.
    void check() const
    {
        mKv.reject_unconsumed();
    }

    std::string out_dir()
    {
        std::filesystem::create_directories(mCommon.out);
        return mCommon.out;
    }

    std::string out_path(std::string const& name)
    {
        return out_dir() + "/" + name;
    }

    template <typename T>
    T pick(std::optional<T> const& flag, std::string const& key, T fallback)
    {
        T fromFile = fallback;
        if constexpr (std::is_same_v<T, std::string>)
        {
            fromFile = mKv.take_string(key, fallback);
        }
        else if constexpr (std::is_same_v<T, bool>)
        {
            fromFile = mKv.take_bool(key, fallback);
        }
        else if constexpr (std::is_floating_point_v<T>)
        {
            fromFile = mKv.take_real(key, fallback);
        }
        else if constexpr (std::is_unsigned_v<T>)
        {
            fromFile = static_cast<T>(mKv.take_uint(key, fallback));
        }
        else
        {
            fromFile = static_cast<T>(mKv.take_int(key, fallback));
        }
        return flag ? *flag : fromFile;
    }

private:
    Common const& mCommon;
    KeyValueFile mKv;
    std::uint64_t mSeed = 0;
};

std::vector<std::string> read_doc_lines(std::string const& path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw DataError("cannot open " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
    {
        if (!line.empty() && line.back() == '\r')
        {
            line.pop_back();
        }
        lines.push_back(line);
    }
    return lines;
}

std::string require(std::string const& value, char const* flag)
{
    if (value.empty())
    {
        throw ArgumentError(std::string(flag) + " is required");
    }
    return value;
}

SpecialIds default_special()
{
    return SpecialIds{0, 1, 2, 3, 4};
}

struct LoadedModel
{
    ArchConfig arch;
    ModelParams<float> params;
    TensorContainer container;
};

LoadedModel load_model(std::string const& path)
{
    LoadedModel m;
    m.container = load_container(path);
    auto const prefix = m.container.find("model.embed.tokens") != nullptr ? "model." : "";
    m.arch = get_arch(m.container);
    m.params = get_model(m.container, m.arch, prefix);
    return m;
}

void save_model(std::string const& path, ArchConfig const& arch, ModelParams<float> const& params,
    std::vector<std::pair<std::string, std::string>> const& extra = {})
{
    TensorContainer c;
    put_model(c, arch, params);
    for (auto const& [k, v] : extra)
    {
        c.metadata.set(k, v);
    }
    save_container(path, c);
}

void print_run(std::ostream& out, TrainResult const& r)
{
    if (!r.metrics.empty())
    {
        out << "first " << format_metrics(r.metrics.front()) << '\n';
        out << "last " << format_metrics(r.metrics.back()) << '\n';
    }
    out << "steps=" << r.state.step << " tokens=" << r.state.tokens_seen << " checkpoints=" << r.checkpoints.size()
        << (r.exhausted ? " (dataset exhausted)" : "") << '\n';
}

/// Phase options every training subcommand shares.
struct PhaseFlags
{
    std::optional<std::uint64_t> budget;
    std::optional<std::int64_t> max_steps;
    std::optional<std::int64_t> batch;
    std::optional<std::int64_t> microbatch;
    std::optional<double> lr;
    std::optional<std::int64_t> epochs;
    std::optional<std::uint64_t> checkpoint_every;

    void add(CLI::App* sub)
    {
        sub->add_option("--budget", budget, "token budget (phase.token_budget)");
        sub->add_option("--max-steps", max_steps, "optimizer step cap, 0 = none (phase.max_steps)");
        sub->add_option("--batch", batch, "sequences per optimizer step (phase.batch_sequences)");
        sub->add_option("--microbatch", microbatch, "sequences per forward pass (phase.microbatch)");
        sub->add_option("--lr", lr, "peak learning rate (phase.peak_lr)");
        sub->add_option("--epochs", epochs, "passes over the data (phase.epochs)");
        sub->add_option("--checkpoint-every", checkpoint_every, "checkpoint interval in tokens (phase.checkpoint_every_tokens)");
    }

    TrainPhaseConfig resolve(Settings& s, TrainPhaseConfig base)
    {
        auto p = read_phase(s.kv(), "phase.", base);
        p.seed = s.seed();
        p.token_budget = budget.value_or(p.token_budget);
        p.max_steps = max_steps.value_or(p.max_steps);
        p.batch_sequences = batch.value_or(p.batch_sequences);
        p.microbatch = microbatch.value_or(p.microbatch);
        p.peak_lr = lr.value_or(p.peak_lr);
        p.epochs = epochs.value_or(p.epochs);
        p.checkpoint_every_tokens = checkpoint_every.value_or(p.checkpoint_every_tokens);
        return p;
    }
};

SpecialIds special_from(std::string const& vocab_path)
{
    return vocab_path.empty() ? default_special() : Vocab::load(vocab_path).special();
}

} // namespace

std::vector<std::string> subcommand_names()
{
    return {"tokenize", "dedup", "filter", "split-long", "pretrain", "extend", "mntp", "merge-adapters",
        "embed-train", "niah-gen", "niah-eval", "qa-finetune", "bench", "inspect"};
}

int dispatch(std::vector<std::string> const& argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"mgbert: encoder pre-training, context extension and evaluation pipeline", "mgbert"};
    app.require_subcommand(1, 1);
    std::string listing = "subcommands:";
    for (auto const& n : subcommand_names())
    {
        listing += " " + n;
    }
    app.footer(listing);

    Common common;
    std::map<std::string, std::function<void()>> actions;
    auto make = [&](std::string const& name, std::string const& help)
    {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, common);
        return sub;
    };

    // tokenize
    std::string tok_vocab;
    std::string tok_input;
    bool tok_specials = false;
    {
        auto* sub = make("tokenize", "Tokenize one document per line into a sequence file");
        sub->add_option("--vocab", tok_vocab, "vocabulary file, one piece per line")->required();
        sub->add_option("--input", tok_input, "text file, one document per line")->required();
        sub->add_flag("--add-specials", tok_specials, "wrap each document in [CLS] ... [SEP]");
        actions["tokenize"] = [&]
        {
            Settings s(common);
            s.check();
            auto const vocab = Vocab::load(tok_vocab);
            std::vector<std::vector<TokenId>> seqs;
            for (auto const& line : read_doc_lines(tok_input))
            {
                if (count_words(line) > 0)
                {
                    seqs.push_back(encode(line, vocab, tok_specials));
                }
            }
            write_sequences(s.out_path("tokens.bin"), seqs);
            out << format_report(compose_report(seqs)) << '\n';
        };
    }

    // dedup
    std::string dd_input;
    std::optional<double> dd_fp;
    std::optional<std::uint64_t> dd_expected;
    {
        auto* sub = make("dedup", "Drop exact-duplicate paragraphs with a Bloom filter");
        sub->add_option("--input", dd_input, "text file; paragraphs separated by blank lines")->required();
        sub->add_option("--fp-rate", dd_fp, "target false-positive rate (dedup.fp_rate, default 0.01)");
        sub->add_option("--expected", dd_expected, "filter capacity (dedup.expected_items, default: paragraph count)");
        actions["dedup"] = [&]
        {
            Settings s(common);
            auto const paragraphs = split_paragraphs(read_file_bytes(dd_input));
            DedupParams params;
            params.fp_rate = s.pick<double>(dd_fp, "dedup.fp_rate", 0.01);
            params.expected_items = std::max<std::uint64_t>(
                1, s.pick<std::uint64_t>(dd_expected, "dedup.expected_items", paragraphs.size()));
            params.seed = s.seed();
            s.check();
            auto const r = dedup(paragraphs, params);
            write_file_bytes(s.out_path("dedup.txt"), join_paragraphs(r.survivors) + "\n");
            out << "input=" << r.stats.input << " survivors=" << r.stats.survivors << " dropped=" << r.stats.dropped
                << " fp_rate=" << format_real(params.fp_rate) << '\n';
        };
    }

    // filter
    std::string fl_input;
    std::string fl_vocab;
    std::optional<double> fl_threshold;
    {
        auto* sub = make("filter", "Token-to-word ratio quality filter, one document per line");
        sub->add_option("--input", fl_input, "text file, one document per line")->required();
        sub->add_option("--vocab", fl_vocab, "vocabulary file")->required();
        sub->add_option("--threshold", fl_threshold, "maximum tokens per word (filter.threshold, default 2.5)");
        actions["filter"] = [&]
        {
            Settings s(common);
            auto const vocab = Vocab::load(fl_vocab);
            auto const threshold = s.pick<double>(fl_threshold, "filter.threshold", kDefaultRatioThreshold);
            s.check();
            std::string kept;
            std::int64_t n_keep = 0;
            std::int64_t n_drop = 0;
            for (auto const& line : read_doc_lines(fl_input))
            {
                if (ratio_filter(line, vocab, threshold))
                {
                    kept += line + "\n";
                    ++n_keep;
                }
                else
                {
                    ++n_drop;
                }
            }
            write_file_bytes(s.out_path("filtered.txt"), kept);
            out << "kept=" << n_keep << " dropped=" << n_drop << " threshold=" << format_real(threshold) << '\n';
        };
    }

    // split-long
    std::string sl_input;
    std::string sl_vocab;
    std::optional<std::int64_t> sl_target;
    {
        auto* sub = make("split-long", "Cut long documents into token sequences of bounded length");
        sub->add_option("--input", sl_input, "text file, one document per line")->required();
        sub->add_option("--vocab", sl_vocab, "vocabulary file")->required();
        sub->add_option("--target-len", sl_target, "maximum tokens per piece (split.target_len, default 8192)");
        actions["split-long"] = [&]
        {
            Settings s(common);
            auto const vocab = Vocab::load(sl_vocab);
            auto const target = s.pick<std::int64_t>(sl_target, "split.target_len", kDefaultSplitLen);
            s.check();
            std::vector<std::vector<TokenId>> seqs;
            for (auto const& line : read_doc_lines(sl_input))
            {
                for (auto& piece : split_long(line, vocab, target))
                {
                    seqs.push_back(std::move(piece));
                }
            }
            write_sequences(s.out_path("sequences.bin"), seqs);
            out << format_report(compose_report(seqs)) << '\n';
        };
    }

    // pretrain
    std::string pt_data;
    std::string pt_init;
    std::string pt_resume;
    std::string pt_vocab;
    std::string pt_preset;
    PhaseFlags pt_phase;
    {
        auto* sub = make("pretrain", "MLM pre-training on a sequence file");
        sub->add_option("--data", pt_data, "sequence file")->required();
        sub->add_option("--init", pt_init, "start from this model instead of a fresh initialization");
        sub->add_option("--resume", pt_resume, "continue from a training checkpoint");
        sub->add_option("--vocab", pt_vocab, "vocabulary (special ids); default ids 0-4");
        sub->add_option("--preset", pt_preset, "architecture preset (arch.preset, default tiny_test)");
        pt_phase.add(sub);
        actions["pretrain"] = [&]
        {
            Settings s(common);
            auto const data = sequences_dataset(read_sequences(pt_data));
            TrainOptions options;
            options.out_dir = s.out_dir();
            options.log = &err;
            options.keep_checkpoints = false;
            if (!pt_resume.empty())
            {
                auto const c = load_container(pt_resume);
                auto const saved = from_checkpoint(c).phase;
                auto const phase = pt_phase.resolve(s, saved);
                s.check();
                ProvenanceLog prior;
                auto const log_path = options.out_dir + "/provenance.bin";
                if (std::filesystem::exists(log_path))
                {
                    prior = ProvenanceLog::load(log_path);
                }
                auto override_phase = saved;
                override_phase.token_budget = phase.token_budget;
                override_phase.max_steps = phase.max_steps;
                print_run(out, resume(c, data, options, override_phase, prior));
                return;
            }
            ArchConfig arch;
            ModelParams<float> params;
            auto const seed = s.seed();
            if (!pt_init.empty())
            {
                auto m = load_model(pt_init);
                arch = m.arch;
                params = std::move(m.params);
            }
            else
            {
                auto const name = s.pick<std::string>(
                    pt_preset.empty() ? std::nullopt : std::optional(pt_preset), "arch.preset", "tiny_test");
                arch = read_arch(s.kv(), "arch.", preset(name));
                params = init_params(arch, seed);
            }
            auto const phase = pt_phase.resolve(s, TrainPhaseConfig{});
            s.check();
            print_run(out, train_mlm(arch, std::move(params), data, phase, special_from(pt_vocab), options));
        };
    }

    // extend
    std::string ex_ckpt;
    std::optional<double> ex_theta;
    std::optional<std::int64_t> ex_len;
    std::string ex_phase;
    std::string ex_data;
    std::string ex_vocab;
    PhaseFlags ex_flags;
    {
        auto* sub = make("extend", "Raise global RoPE theta and maximum length; optionally run ext1/ext2");
        sub->add_option("--checkpoint", ex_ckpt, "model or training checkpoint")->required();
        sub->add_option("--theta", ex_theta, "new global RoPE theta (extend.theta, default 160000)");
        sub->add_option("--max-len", ex_len, "new maximum sequence length (extend.max_len, default 8192)");
        sub->add_option("--phase", ex_phase, "ext1 or ext2: continue MLM training after extending");
        sub->add_option("--data", ex_data, "sequence file for --phase");
        sub->add_option("--vocab", ex_vocab, "vocabulary (special ids); default ids 0-4");
        ex_flags.add(sub);
        actions["extend"] = [&]
        {
            Settings s(common);
            auto m = load_model(ex_ckpt);
            auto const theta = s.pick<double>(ex_theta, "extend.theta", kExtendedTheta);
            auto const len = s.pick<std::int64_t>(ex_len, "extend.max_len", kExtendedMaxLen);
            std::optional<TrainPhaseConfig> phase;
            if (!ex_phase.empty())
            {
                phase = ex_flags.resolve(s, TrainPhaseConfig{});
            }
            s.check();
            auto [params, cfg] = extend(std::move(m.params), m.arch, theta, len);
            save_model(s.out_path("extended.mgb"), cfg, params);
            out << "rope_theta_global=" << format_real(cfg.rope_theta_global) << " max_seq_len=" << cfg.max_seq_len
                << '\n';
            if (!ex_phase.empty())
            {
                auto const id = ext_phase_from_string(ex_phase);
                auto const data = sequences_dataset(read_sequences(require(ex_data, "--data")));
                phase->max_seq_len = std::max(phase->max_seq_len, std::min<std::int64_t>(len, cfg.max_seq_len));
                TrainOptions options;
                options.out_dir = s.out_dir();
                options.log = &err;
                options.keep_checkpoints = false;
                print_run(out, run_phase(cfg, std::move(params), id, data, *phase, special_from(ex_vocab), options));
            }
        };
    }

    // mntp
    std::string mn_ckpt;
    std::string mn_data;
    std::string mn_tag = "ext1";
    std::string mn_vocab;
    std::optional<std::int64_t> mn_rank;
    std::optional<double> mn_alpha;
    std::optional<std::string> mn_targets;
    PhaseFlags mn_flags;
    {
        auto* sub = make("mntp", "Train one MNTP low-rank adapter on a bidirectional copy of a decoder");
        sub->add_option("--checkpoint", mn_ckpt, "decoder or encoder model")->required();
        sub->add_option("--data", mn_data, "sequence file")->required();
        sub->add_option("--phase-tag", mn_tag, "adapter phase tag, ext1 or ext2")->capture_default_str();
        sub->add_option("--vocab", mn_vocab, "vocabulary (special ids); default ids 0-4");
        sub->add_option("--rank", mn_rank, "adapter rank (adapter.rank, default 16)");
        sub->add_option("--alpha", mn_alpha, "adapter alpha (adapter.alpha, default 32)");
        sub->add_option("--targets", mn_targets, "comma list of wq,wk,wv,wo,w_up,w_down (adapter.targets)");
        mn_flags.add(sub);
        actions["mntp"] = [&]
        {
            Settings s(common);
            auto m = load_model(mn_ckpt);
            std::string notice;
            auto const cfg = enable_bidirectional(m.arch, &notice);
            if (!notice.empty())
            {
                err << notice << '\n';
            }
            ext_phase_from_string(mn_tag);
            AdapterOptions ao;
            ao.rank = s.pick<std::int64_t>(mn_rank, "adapter.rank", 16);
            ao.alpha = s.pick<double>(mn_alpha, "adapter.alpha", 32.0);
            ao.targets = parse_targets(s.pick<std::string>(mn_targets, "adapter.targets", join_targets(ao.targets)));
            ao.phase = mn_tag;
            ao.seed = s.seed();
            TrainPhaseConfig base;
            base.mask_rate = 0.2;
            auto const phase = mn_flags.resolve(s, base);
            s.check();
            auto const data = sequences_dataset(read_sequences(mn_data));
            TrainOptions options;
            options.log = &err;
            options.keep_checkpoints = false;
            auto const r = train_mntp_adapter(cfg, m.params, data, phase, special_from(mn_vocab), ao, options);
            auto const path = s.out_path("adapter-" + mn_tag + ".mgb");
            save_container(path, adapter_container(cfg, r.adapters));
            print_run(out, r.run);
            out << "adapter=" << path << '\n';
        };
    }

    // merge-adapters
    std::string mg_ckpt;
    std::vector<std::string> mg_adapters;
    {
        auto* sub = make("merge-adapters", "Fold one or more adapters into the base weights");
        sub->add_option("--checkpoint", mg_ckpt, "base model")->required();
        sub->add_option("--adapter", mg_adapters, "adapter file (repeatable, applied in order)")->required();
        actions["merge-adapters"] = [&]
        {
            Settings s(common);
            s.check();
            auto m = load_model(mg_ckpt);
            std::vector<AdapterSet> sets;
            for (auto const& p : mg_adapters)
            {
                sets.push_back(adapter_from_container(load_container(p)));
            }
            auto const cfg = enable_bidirectional(m.arch);
            auto const c = merged_checkpoint(cfg, m.params, sets);
            save_container(s.out_path("merged.mgb"), c);
            out << "absorbed_phases=" << c.meta("absorbed_phases") << '\n';
        };
    }

    // embed-train
    std::string et_ckpt;
    std::string et_data;
    std::string et_vocab;
    std::optional<double> et_temp;
    PhaseFlags et_flags;
    {
        auto* sub = make("embed-train", "Contrastive (InfoNCE) embedding fine-tune on text triplets");
        sub->add_option("--checkpoint", et_ckpt, "model")->required();
        sub->add_option("--data", et_data, "JSONL with query, positive, negatives")->required();
        sub->add_option("--vocab", et_vocab, "vocabulary file")->required();
        sub->add_option("--temperature", et_temp, "InfoNCE temperature (embed.temperature, default 0.05)");
        et_flags.add(sub);
        actions["embed-train"] = [&]
        {
            Settings s(common);
            auto m = load_model(et_ckpt);
            auto const vocab = Vocab::load(et_vocab);
            Dataset data;
            std::uint64_t id = 0;
            for (auto const& line : read_doc_lines(et_data))
            {
                if (line.find_first_not_of(" \t") == std::string::npos)
                {
                    continue;
                }
                try
                {
                    auto const j = nlohmann::json::parse(line);
                    TrainExample ex;
                    ex.id = id++;
                    ex.parts.push_back(encode(j.at("query").get<std::string>(), vocab, true));
                    ex.parts.push_back(encode(j.at("positive").get<std::string>(), vocab, true));
                    for (auto const& n : j.value("negatives", std::vector<std::string>{}))
                    {
                        ex.parts.push_back(encode(n, vocab, true));
                    }
                    data.push_back(std::move(ex));
                }
                catch (nlohmann::json::exception const& e)
                {
                    throw DataError(std::string("malformed triplet record: ") + e.what());
                }
            }
            TrainPhaseConfig base;
            base.batch_sequences = 128;
            base.microbatch = 128;
            base.peak_lr = 5e-5;
            base.attn_dropout = 0.0;
            auto const phase = et_flags.resolve(s, base);
            auto const temp = s.pick<double>(et_temp, "embed.temperature", 0.05);
            s.check();
            TrainOptions options;
            options.out_dir = s.out_dir();
            options.log = &err;
            options.keep_checkpoints = false;
            auto const r = train_embedder(m.arch, m.params, data, phase, vocab.special(), temp, options);
            save_model(s.out_path("embedder.mgb"), m.arch, r.state.params);
            print_run(out, r);
        };
    }

    // niah-gen
    std::string ng_input;
    std::string ng_vocab;
    std::string ng_split = "train";
    std::optional<std::int64_t> ng_max;
    std::optional<std::int64_t> ng_cap;
    bool ng_exact = false;
    bool ng_norm = false;
    {
        auto* sub = make("niah-gen", "Build QA needle-in-a-haystack examples from SQuAD-style JSONL");
        sub->add_option("--input", ng_input, "JSONL with id, title, question, context, answer, answer_start")->required();
        sub->add_option("--vocab", ng_vocab, "vocabulary file")->required();
        sub->add_option("--split", ng_split, "train (<=3 distractors, 1,024 tokens) or test (<=20, 8,192)")
            ->capture_default_str();
        sub->add_option("--max-distractors", ng_max, "override the split's distractor limit (niah.max_distractors)");
        sub->add_option("--token-cap", ng_cap, "override the split's token cap (niah.token_cap)");
        sub->add_flag("--exact-count", ng_exact, "always aim for the maximum distractor count");
        sub->add_flag("--normalized-leak-check", ng_norm, "match answers after NFC and lowercasing");
        actions["niah-gen"] = [&]
        {
            Settings s(common);
            if (ng_split != "train" && ng_split != "test")
            {
                throw ArgumentError("--split must be train or test");
            }
            auto const vocab = Vocab::load(ng_vocab);
            auto const pairs = read_qa_pairs(ng_input);
            auto opts = split_options(ng_split == "train" ? Split::kTrain : Split::kTest);
            opts.max_distractors = s.pick<std::int64_t>(ng_max, "niah.max_distractors", opts.max_distractors);
            opts.token_cap = s.pick<std::int64_t>(ng_cap, "niah.token_cap", opts.token_cap);
            s.check();
            opts.exact_count = ng_exact;
            opts.normalized_leak_check = ng_norm;
            auto const built = build_dataset(pairs, opts, vocab, s.seed(), &err);
            auto const path = s.out_path("niah-" + ng_split + ".jsonl");
            write_haystacks(path, built.examples);
            out << "examples=" << built.examples.size() << " skipped=" << built.skipped_ids.size() << " out=" << path
                << '\n';
        };
    }

    // niah-eval
    std::string ne_ckpt;
    std::string ne_data;
    std::string ne_vocab;
    std::int64_t ne_max_answer = 30;
    std::vector<std::int64_t> ne_edges = kDefaultBucketEdges;
    {
        auto* sub = make("niah-eval", "Exact-match evaluation of a span model on haystack JSONL");
        sub->add_option("--checkpoint", ne_ckpt, "span QA model")->required();
        sub->add_option("--data", ne_data, "haystack JSONL from niah-gen")->required();
        sub->add_option("--vocab", ne_vocab, "vocabulary file")->required();
        sub->add_option("--max-answer-len", ne_max_answer, "longest predicted span in tokens")->capture_default_str();
        sub->add_option("--edges", ne_edges, "bucket edges in tokens")->delimiter(',')->capture_default_str();
        actions["niah-eval"] = [&]
        {
            Settings s(common);
            s.check();
            auto m = load_model(ne_ckpt);
            auto const vocab = Vocab::load(ne_vocab);
            auto const golds = read_haystacks(ne_data);
            std::vector<SpanPrediction> preds;
            for (auto const& g : golds)
            {
                auto const in = qa_input(g, vocab, m.arch.max_seq_len);
                auto const& t = in.example;
                auto const [a, b] = predict_span(m.arch, m.params, t.parts[0], t.context_begin, ne_max_answer);
                preds.emplace_back(std::make_pair(a - t.context_begin, b - t.context_begin));
            }
            auto const report = evaluate(preds, golds, vocab, ne_edges);
            out << format_eval(report);
        };
    }

    // qa-finetune
    std::string qa_ckpt;
    std::string qa_data;
    std::string qa_vocab;
    PhaseFlags qa_flags;
    {
        auto* sub = make("qa-finetune", "Span-extraction fine-tune on haystack JSONL");
        sub->add_option("--checkpoint", qa_ckpt, "model")->required();
        sub->add_option("--data", qa_data, "haystack JSONL from niah-gen")->required();
        sub->add_option("--vocab", qa_vocab, "vocabulary file")->required();
        qa_flags.add(sub);
        actions["qa-finetune"] = [&]
        {
            Settings s(common);
            auto m = load_model(qa_ckpt);
            auto const vocab = Vocab::load(qa_vocab);
            TrainPhaseConfig base;
            base.attn_dropout = 0.0;
            base.max_seq_len = m.arch.max_seq_len;
            auto const phase = qa_flags.resolve(s, base);
            s.check();
            auto const max_len = std::min(phase.max_seq_len, m.arch.max_seq_len);
            Dataset data;
            std::uint64_t id = 0;
            for (auto const& ex : read_haystacks(qa_data))
            {
                auto in = qa_input(ex, vocab, max_len, id++);
                if (!in.gold_inside)
                {
                    err << "skipped " << ex.id << ": gold span truncated at " << max_len << " tokens\n";
                    continue;
                }
                data.push_back(std::move(in.example));
            }
            TrainOptions options;
            options.out_dir = s.out_dir();
            options.log = &err;
            options.keep_checkpoints = false;
            auto const r = train_span_qa(m.arch, m.params, data, phase, vocab.special(), options);
            save_model(s.out_path("qa.mgb"), m.arch, r.state.params);
            print_run(out, r);
        };
    }

    // bench
    std::vector<std::string> bn_specs;
    std::string bn_preset;
    std::string bn_ckpt;
    std::optional<std::int64_t> bn_docs;
    std::optional<std::int64_t> bn_batch;
    std::optional<std::int64_t> bn_reps;
    std::optional<std::int64_t> bn_max_len;
    bool bn_variance = false;
    std::vector<std::string> bn_paths{"padded", "packed"};
    {
        auto* sub = make("bench", "Padded vs packed inference throughput on synthetic data");
        sub->add_option("--spec", bn_specs, "fixed:L or normal:MEAN:SPREAD (repeatable; default the four standard sets)");
        sub->add_option("--preset", bn_preset, "architecture preset when no checkpoint is given (default tiny_test)");
        sub->add_option("--checkpoint", bn_ckpt, "model to time");
        sub->add_option("--n-docs", bn_docs, "documents per dataset (bench.n_docs, default 8192)");
        sub->add_option("--batch-docs", bn_batch, "documents per batch (bench.batch_docs, default 32)");
        sub->add_option("--reps", bn_reps, "timed repetitions, 0 = counts only (bench.reps, default 10)");
        sub->add_option("--max-len", bn_max_len, "maximum length raised to at least this (bench.max_len, default 8192)");
        sub->add_flag("--variance", bn_variance, "read normal spreads as variances instead of standard deviations");
        sub->add_option("--path", bn_paths, "padded and/or packed")->capture_default_str();
        actions["bench"] = [&]
        {
            Settings s(common);
            ArchConfig arch;
            ModelParams<float> params;
            auto const seed = s.seed();
            std::string model_id;
            if (!bn_ckpt.empty())
            {
                auto m = load_model(bn_ckpt);
                arch = m.arch;
                params = std::move(m.params);
                model_id = std::filesystem::path(bn_ckpt).stem().string();
            }
            else
            {
                model_id = s.pick<std::string>(
                    bn_preset.empty() ? std::nullopt : std::optional(bn_preset), "arch.preset", "tiny_test");
                arch = read_arch(s.kv(), "arch.", preset(model_id));
            }
            arch.max_seq_len = std::max(arch.max_seq_len, s.pick<std::int64_t>(bn_max_len, "bench.max_len", 8192));
            auto const n_docs = s.pick<std::int64_t>(bn_docs, "bench.n_docs", 8192);
            auto const batch = s.pick<std::int64_t>(bn_batch, "bench.batch_docs", 32);
            auto const reps = s.pick<std::int64_t>(bn_reps, "bench.reps", 10);
            s.check();
            if (bn_specs.empty())
            {
                bn_specs = {"fixed:512", "normal:256:64", "fixed:8192", "normal:4096:1024"};
            }
            if (reps > 0 && bn_ckpt.empty())
            {
                params = init_params(arch, seed);
            }
            std::vector<ThroughputReport> reports;
            for (auto const& text : bn_specs)
            {
                auto spec = parse_spec(text);
                spec.n_docs = n_docs;
                spec.seed = seed;
                spec.spread_is_variance = spec.spread_is_variance || bn_variance;
                auto const docs = gen_synthetic(spec, arch.vocab_size, arch.max_seq_len, default_special());
                for (auto const& p : bn_paths)
                {
                    if (p != "padded" && p != "packed")
                    {
                        throw ArgumentError("--path must be padded or packed");
                    }
                    auto const path = p == "padded" ? ExecPath::kPadded : ExecPath::kPacked;
                    reports.push_back(measure(params, arch, docs, spec, path, batch, reps, default_special().pad, model_id));
                    out << report_line(reports.back()) << '\n';
                }
            }
            auto const table = report_table(reports);
            out << table;
            std::string lines;
            for (auto const& r : reports)
            {
                lines += report_line(r) + "\n";
            }
            write_file_bytes(s.out_path("bench.txt"), lines + table);
        };
    }

    // inspect
    std::string in_ckpt;
    std::string in_prov;
    {
        auto* sub = make("inspect", "Print checkpoint metadata and tensor shapes, or provenance records");
        sub->add_option("--checkpoint", in_ckpt, "tensor container file");
        sub->add_option("--provenance", in_prov, "provenance log file");
        actions["inspect"] = [&]
        {
            if (in_ckpt.empty() && in_prov.empty())
            {
                throw ArgumentError("inspect needs --checkpoint or --provenance");
            }
            if (!in_ckpt.empty())
            {
                auto const c = load_container(in_ckpt);
                out << c.metadata.str();
                for (auto const& [name, t] : c.tensors)
                {
                    out << "tensor " << name << " " << t.rows << "x" << t.cols << '\n';
                }
            }
            if (!in_prov.empty())
            {
                auto const log = ProvenanceLog::load(in_prov);
                out << "records=" << log.size() << '\n';
                for (auto const& r : log.records())
                {
                    out << "step=" << r.step << " tokens=" << r.token_count << " rng=" << r.rng_digest << " ids=";
                    for (std::size_t i = 0; i < r.example_ids.size(); ++i)
                    {
                        out << (i ? "," : "") << r.example_ids[i];
                    }
                    out << '\n';
                }
            }
        };
    }

    std::vector<char const*> args;
    args.reserve(argv.size());
    for (auto const& a : argv)
    {
        args.push_back(a.c_str());
    }
    try
    {
        app.parse(static_cast<int>(args.size()), args.data());
    }
    catch (CLI::CallForHelp const& e)
    {
        return app.exit(e, out, err);
    }
    catch (CLI::CallForAllHelp const& e)
    {
        return app.exit(e, out, err);
    }
    catch (CLI::ParseError const& e)
    {
        app.exit(e, out, err);
        err << listing << '\n';
        return kExitUsage;
    }

    try
    {
        for (auto* sub : app.get_subcommands())
        {
            actions.at(sub->get_name())();
        }
        return kExitOk;
    }
    catch (ConfigError const& e)
    {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (ArgumentError const& e)
    {
        err << "argument error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (RangeError const& e)
    {
        err << "argument error: " << e.what() << '\n';
        return kExitUsage;
    }
    catch (DataError const& e)
    {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    }
    catch (LengthError const& e)
    {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    }
    catch (NumericError const& e)
    {
        err << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    }
    catch (std::exception const& e)
    {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
}

} // namespace mgbert
