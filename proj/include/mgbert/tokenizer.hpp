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

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mgbert
{

using TokenId = std::int32_t;

struct SpecialIds
{
    TokenId pad = -1;
    TokenId unk = -1;
    TokenId cls = -1;
    TokenId sep = -1;
    TokenId mask = -1;

    bool is_special(TokenId id) const
    {
        return id == pad || id == unk || id == cls || id == sep || id == mask;
    }
};

struct Normalization
{
    bool nfc = false;
    bool lowercase = false;
};

/// One token with its byte range in the (normalized) input text.
struct TokenSpan
{
    TokenId id = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// WordPiece-style vocabulary. Line number in vocab.txt is the id; the special
/// tokens [PAD] [UNK] [CLS] [SEP] [MASK] must be present.
class Vocab
{
public:
    static Vocab from_pieces(std::vector<std::string> pieces, std::string continuation_prefix = "##");
    static Vocab load(std::string const& path);
    void save(std::string const& path) const;

    std::size_t size() const
    {
        return mPieces.size();
    }
    SpecialIds const& special() const
    {
        return mSpecial;
    }
    std::string const& piece(TokenId id) const;
    std::vector<std::string> const& pieces() const
    {
        return mPieces;
    }
    std::string const& continuation_prefix() const
    {
        return mPrefix;
    }
    /// -1 when absent.
    TokenId find(std::string_view piece) const;

    Normalization normalization;

private:
    std::vector<std::string> mPieces;
    std::unordered_map<std::string, TokenId> mIndex;
    SpecialIds mSpecial;
    std::string mPrefix = "##";
};

/// Applies the vocabulary's normalization settings (identity by default).
std::string normalize(std::string_view text, Normalization const& norm);

/// Greedy longest-match over whitespace-split words; a word with any unmatched
/// remainder becomes a single UNK.
std::vector<TokenId> encode(std::string_view text, Vocab const& vocab, bool add_specials);
std::vector<TokenSpan> encode_with_offsets(std::string_view text, Vocab const& vocab);
std::size_t count_tokens(std::string_view text, Vocab const& vocab);
std::size_t count_words(std::string_view text);

std::string decode(std::span<TokenId const> ids, Vocab const& vocab);

} // namespace mgbert
