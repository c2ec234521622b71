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

#include "mgbert/checkpoint.hpp"

#include "mgbert/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace mgbert
{

namespace
{

constexpr char kMagic[8] = {'M', 'G', 'B', 'T', 'N', 'S', 'R', '1'};

template <typename U>
void put_le(std::string& out, U value)
{
    for (std::size_t i = 0; i < sizeof(U); ++i)
    {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
    }
}

class Reader
{
public:
    explicit Reader(std::string const& bytes)
        : mBytes(bytes)
    {
    }

    template <typename U>
    U get()
    {
        need(sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
        {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(mBytes[mPos + i])) << (8 * i);
        }
        mPos += sizeof(U);
        return static_cast<U>(v);
    }

    std::string bytes(std::size_t n)
    {
        need(n);
        auto s = mBytes.substr(mPos, n);
        mPos += n;
        return s;
    }

    bool done() const
    {
        return mPos == mBytes.size();
    }

private:
    void need(std::size_t n) const
    {
        if (mPos + n > mBytes.size())
        {
            throw DataError("tensor container truncated");
        }
    }

    std::string const& mBytes;
    std::size_t mPos = 0;
};

} // namespace

Matrix<float> const* TensorContainer::find(std::string const& name) const
{
    for (auto const& [n, m] : tensors)
    {
        if (n == name)
        {
            return &m;
        }
    }
    return nullptr;
}

Matrix<float> const& TensorContainer::at(std::string const& name) const
{
    auto const* m = find(name);
    if (m == nullptr)
    {
        throw DataError("tensor '" + name + "' missing from container");
    }
    return *m;
}

std::optional<std::string> TensorContainer::meta_opt(std::string const& key) const
{
    for (auto const& [k, v] : metadata.entries())
    {
        if (k == key)
        {
            return v;
        }
    }
    return std::nullopt;
}

std::string TensorContainer::meta(std::string const& key) const
{
    auto v = meta_opt(key);
    if (!v)
    {
        throw DataError("metadata key '" + key + "' missing from container");
    }
    return *v;
}

std::string encode_container(TensorContainer const& c)
{
    std::string out(kMagic, sizeof(kMagic));
    auto const meta = c.metadata.str();
    put_le<std::uint64_t>(out, meta.size());
    out += meta;
    put_le<std::uint64_t>(out, c.tensors.size());
    for (auto const& [name, m] : c.tensors)
    {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_le<std::uint32_t>(out, 2);
        put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows));
        put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols));
        for (float const v : m.data)
        {
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

TensorContainer decode_container(std::string const& bytes)
{
    Reader r(bytes);
    if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    {
        throw DataError("not a tensor container (bad magic)");
    }
    TensorContainer c;
    auto const meta_len = r.get<std::uint64_t>();
    c.metadata = KeyValueFile::parse(r.bytes(meta_len));
    auto const count = r.get<std::uint64_t>();
    for (std::uint64_t t = 0; t < count; ++t)
    {
        auto const name_len = r.get<std::uint32_t>();
        auto name = r.bytes(name_len);
        if (r.get<std::uint32_t>() != 2)
        {
            throw DataError("tensor '" + name + "' is not two-dimensional");
        }
        auto const rows = static_cast<std::int64_t>(r.get<std::uint64_t>());
        auto const cols = static_cast<std::int64_t>(r.get<std::uint64_t>());
        Matrix<float> m(rows, cols);
        for (auto& v : m.data)
        {
            v = std::bit_cast<float>(r.get<std::uint32_t>());
        }
        c.tensors.emplace_back(std::move(name), std::move(m));
    }
    if (!r.done())
    {
        throw DataError("trailing bytes after tensor container");
    }
    return c;
}

void write_file_bytes(std::string const& path, std::string const& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
    {
        throw DataError("cannot write '" + path + "'");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
    {
        throw DataError("write failed for '" + path + "'");
    }
}

std::string read_file_bytes(std::string const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw DataError("cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void save_container(std::string const& path, TensorContainer const& c)
{
    write_file_bytes(path, encode_container(c));
}

TensorContainer load_container(std::string const& path)
{
    return decode_container(read_file_bytes(path));
}

void put_model(TensorContainer& c, ArchConfig const& cfg, ModelParams<float> const& params, std::string const& prefix)
{
    write_arch(cfg, c.metadata, "arch.");
    for (auto const& [name, m] : params.named())
    {
        c.tensors.emplace_back(prefix + name, *m);
    }
}

ArchConfig get_arch(TensorContainer const& c)
{
    KeyValueFile kv;
    std::string const prefix = "arch.";
    for (auto const& [k, v] : c.metadata.entries())
    {
        if (k.starts_with(prefix))
        {
            kv.set(k.substr(prefix.size()), v);
        }
    }
    auto cfg = read_arch(kv);
    kv.reject_unconsumed();
    return cfg;
}

ModelParams<float> get_model(TensorContainer const& c, ArchConfig const& cfg, std::string const& prefix)
{
    // Build a correctly shaped skeleton, then fill it by name.
    auto params = init_params(cfg, 0);
    for (auto& [name, m] : params.named())
    {
        auto const& stored = c.at(prefix + name);
        if (!stored.same_shape(*m))
        {
            throw DataError("tensor '" + name + "' has the wrong shape");
        }
        *m = stored;
    }
    return params;
}

} // namespace mgbert
