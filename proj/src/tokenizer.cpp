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

#include "mgbert/tokenizer.hpp"

#include "mgbert/error.hpp"

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include <fstream>

namespace mgbert
{

namespace
{

constexpr std::size_t kMaxWordBytes = 200;

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_continuation_byte(char c)
{
    return (static_cast<unsigned char>(c) & 0xC0) == 0x80;
}

} // namespace

Vocab Vocab::from_pieces(std::vector<std::string> pieces, std::string continuation_prefix)
{
    Vocab v;
    v.mPrefix = std::move(continuation_prefix);
    v.mPieces = std::move(pieces);
    for (std::size_t i = 0; i < v.mPieces.size(); ++i)
    {
        auto const [it, inserted] = v.mIndex.emplace(v.mPieces[i], static_cast<TokenId>(i));
        if (!inserted)
        {
            throw DataError("duplicate vocabulary piece '" + v.mPieces[i] + "'");
        }
    }
    auto require = [&](char const* literal) -> TokenId
    {
        auto const id = v.find(literal);
        if (id < 0)
        {
            throw DataError(std::string("vocabulary lacks special token ") + literal);
        }
        return id;
    };
    v.mSpecial.pad = require("[PAD]");
    v.mSpecial.unk = require("[UNK]");
    v.mSpecial.cls = require("[CLS]");
    v.mSpecial.sep = require("[SEP]");
    v.mSpecial.mask = require("[MASK]");
    return v;
}

Vocab Vocab::load(std::string const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw DataError("cannot open vocabulary '" + path + "'");
    }
    std::vector<std::string> pieces;
    std::string line;
    while (std::getline(in, line))
    {
        if (!line.empty() && line.back() == '\r')
        {
            line.pop_back();
        }
        pieces.push_back(line);
    }
    return from_pieces(std::move(pieces));
}

void Vocab::save(std::string const& path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
    {
        throw DataError("cannot write vocabulary '" + path + "'");
    }
    for (auto const& p : mPieces)
    {
        out << p << '\n';
    }
}

std::string const& Vocab::piece(TokenId id) const
{
    if (id < 0 || static_cast<std::size_t>(id) >= mPieces.size())
    {
        throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return mPieces[static_cast<std::size_t>(id)];
}

TokenId Vocab::find(std::string_view piece) const
{
    auto const it = mIndex.find(std::string(piece));
    return it == mIndex.end() ? -1 : it->second;
}

std::string normalize(std::string_view text, Normalization const& norm)
{
    if (!norm.nfc && !norm.lowercase)
    {
        return std::string(text);
    }
    auto ustr = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<std::int32_t>(text.size())));
    if (norm.nfc)
    {
        UErrorCode status = U_ZERO_ERROR;
        auto const* nfc = icu::Normalizer2::getNFCInstance(status);
        if (U_FAILURE(status))
        {
            throw DataError("NFC normalizer unavailable");
        }
        ustr = nfc->normalize(ustr, status);
        if (U_FAILURE(status))
        {
            throw DataError("NFC normalization failed");
        }
    }
    if (norm.lowercase)
    {
        ustr.toLower();
    }
    std::string out;
    ustr.toUTF8String(out);
    return out;
}

std::vector<TokenSpan> encode_with_offsets(std::string_view raw, Vocab const& vocab)
{
    auto const normalized = normalize(raw, vocab.normalization);
    std::string_view const text = normalized;
    auto const& prefix = vocab.continuation_prefix();
    std::vector<TokenSpan> out;
    std::string candidate;

    std::size_t pos = 0;
    while (pos < text.size())
    {
        while (pos < text.size() && is_space(text[pos]))
        {
            ++pos;
        }
        if (pos >= text.size())
        {
            break;
        }
        std::size_t word_end = pos;
        while (word_end < text.size() && !is_space(text[word_end]))
        {
            ++word_end;
        }
        auto const word = text.substr(pos, word_end - pos);
        auto const word_start = out.size();
        bool matched = word.size() <= kMaxWordBytes;

        std::size_t start = 0;
        while (matched && start < word.size())
        {
            TokenId best = -1;
            std::size_t best_end = start;
            for (std::size_t end = word.size(); end > start; --end)
            {
                if (end < word.size() && is_continuation_byte(word[end]))
                {
                    continue;
                }
                candidate.assign(start > 0 ? prefix : std::string{});
                candidate.append(word.substr(start, end - start));
                auto const id = vocab.find(candidate);
                if (id >= 0)
                {
                    best = id;
                    best_end = end;
                    break;
                }
            }
            if (best < 0)
            {
                matched = false;
                break;
            }
            out.push_back({best, pos + start, pos + best_end});
            start = best_end;
        }
        if (!matched)
        {
            out.resize(word_start);
            out.push_back({vocab.special().unk, pos, word_end});
        }
        pos = word_end;
    }
    return out;
}

std::vector<TokenId> encode(std::string_view text, Vocab const& vocab, bool add_specials)
{
    auto const spans = encode_with_offsets(text, vocab);
    std::vector<TokenId> ids;
    ids.reserve(spans.size() + 2);
    if (add_specials)
    {
        ids.push_back(vocab.special().cls);
    }
    for (auto const& s : spans)
    {
        ids.push_back(s.id);
    }
    if (add_specials)
    {
        ids.push_back(vocab.special().sep);
    }
    return ids;
}

std::size_t count_tokens(std::string_view text, Vocab const& vocab)
{
    return encode_with_offsets(text, vocab).size();
}

std::size_t count_words(std::string_view text)
{
    std::size_t words = 0;
    bool in_word = false;
    for (char const c : text)
    {
        bool const space = is_space(c);
        if (!space && !in_word)
        {
            ++words;
        }
        in_word = !space;
    }
    return words;
}

std::string decode(std::span<TokenId const> ids, Vocab const& vocab)
{
    auto const& prefix = vocab.continuation_prefix();
    std::string out;
    for (auto const id : ids)
    {
        auto const& p = vocab.piece(id);
        if (!prefix.empty() && p.size() > prefix.size() && p.starts_with(prefix) && !out.empty())
        {
            out.append(p, prefix.size());
            continue;
        }
        if (!out.empty())
        {
            out.push_back(' ');
        }
        out.append(p);
    }
    return out;
}

} // namespace mgbert
