// SPDX-License-Identifier: Apache-2.0
#include "mtml/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mtml/error.hpp"

namespace mtml {
namespace {

constexpr char kMagic[8] = {'M', 'T', 'M', 'L', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

nlohmann::json directory(const ad::NamedTensors& tensors, std::uint64_t& offset) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : tensors) {
        out.push_back({{"name", e.name}, {"shape", e.value.shape()}, {"trainable", e.trainable}, {"offset", offset}});
        offset += e.value.numel();
    }
    return out;
}

void write_payload(std::ofstream& out, const ad::NamedTensors& tensors) {
    for (const auto& e : tensors) {
        const auto data = e.value.data();
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    }
}

ad::NamedTensors read_tensors(const nlohmann::json& dir, const std::vector<double>& payload) {
    ad::NamedTensors out;
    for (const auto& entry : dir) {
        ad::Shape shape = entry.at("shape").get<ad::Shape>();
        const auto offset = entry.at("offset").get<std::uint64_t>();
        const std::size_t count = ad::numel(shape);
        if (offset + count > payload.size()) throw IntegrityError("checkpoint: tensor extends past the payload");
        std::vector<double> values(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                   payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
        out.add(entry.at("name").get<std::string>(), ad::Tensor(std::move(shape), std::move(values)),
                entry.at("trainable").get<bool>());
    }
    return out;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"embed_dim", c.embed_dim},
            {"num_heads", c.num_heads},
            {"encoder_layers", c.encoder_layers},
            {"decoder_layers", c.decoder_layers},
            {"feedforward_dim", c.feedforward_dim},
            {"max_sequence_length", c.max_sequence_length},
            {"dropout_rate", c.dropout_rate},
            {"embedding_file", c.embedding_file}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.feedforward_dim = j.value("feedforward_dim", c.feedforward_dim);
    c.max_sequence_length = j.value("max_sequence_length", c.max_sequence_length);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.embedding_file = j.value("embedding_file", c.embedding_file);
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (ckpt.vocabulary.size() != ckpt.config.vocab_size) {
        throw ContractError("checkpoint: vocabulary size does not match config.vocab_size");
    }
    std::uint64_t offset = 0;
    nlohmann::json header = {{"format_version", kFormatVersion},
                             {"architecture", ckpt.architecture},
                             {"config", to_json(ckpt.config)},
                             {"vocabulary", ckpt.vocabulary.words()},
                             {"metadata", ckpt.metadata}};
    header["parameters"] = directory(ckpt.parameters, offset);
    header["optimizer_state"] = directory(ckpt.optimizer_state, offset);
    header["payload_values"] = offset;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IntegrityError("checkpoint: cannot open '" + tmp.string() + "' for writing");
        const std::uint64_t length = text.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&length), sizeof length);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        write_payload(out, ckpt.parameters);
        write_payload(out, ckpt.optimizer_state);
        if (!out) throw IntegrityError("checkpoint: write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IntegrityError("checkpoint: cannot open '" + path.string() + "'");
    char magic[sizeof kMagic] = {};
    std::uint64_t length = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&length), sizeof length);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw IntegrityError("checkpoint: '" + path.string() + "' is not a checkpoint file");
    }
    const auto file_size = std::filesystem::file_size(path);
    if (length > file_size) throw IntegrityError("checkpoint: header length exceeds file size");
    std::string text(length, '\0');
    in.read(text.data(), static_cast<std::streamsize>(length));
    if (!in) throw IntegrityError("checkpoint: truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
    }
    if (header.value("format_version", 0) != kFormatVersion) {
        throw IntegrityError("checkpoint: unsupported format version");
    }
    const auto values = header.at("payload_values").get<std::uint64_t>();
    const std::uint64_t expected = sizeof kMagic + sizeof length + length + values * sizeof(double);
    if (file_size != expected) {
        throw IntegrityError("checkpoint: file size " + std::to_string(file_size) + " does not match expected " +
                             std::to_string(expected));
    }
    std::vector<double> payload(values);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(values * sizeof(double)));
    if (!in) throw IntegrityError("checkpoint: truncated payload");

    Checkpoint ckpt;
    try {
        ckpt.architecture = header.at("architecture").get<std::string>();
        ckpt.config = model_config_from_json(header.at("config"));
        ckpt.vocabulary = Vocabulary::from_words(header.at("vocabulary").get<std::vector<std::string>>());
        ckpt.parameters = read_tensors(header.at("parameters"), payload);
        ckpt.optimizer_state = read_tensors(header.at("optimizer_state"), payload);
        ckpt.metadata = header.value("metadata", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed header: ") + e.what());
    }
    return ckpt;
}

}  // namespace mtml
