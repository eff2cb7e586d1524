#include "i2p/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace i2p {
namespace {

static_assert(sizeof(double) == 8);

void write_le(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) {
        bits = __builtin_bswap64(bits);
    }
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

double read_le(std::ifstream& in) {
    std::uint64_t bits = 0;
    in.read(reinterpret_cast<char*>(&bits), sizeof bits);
    if constexpr (std::endian::native == std::endian::big) {
        bits = __builtin_bswap64(bits);
    }
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

nlohmann::json parse_header(std::ifstream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line)) {
        throw Error("checkpoint " + path.string() + ": missing header");
    }
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw Error("checkpoint " + path.string() + ": bad header: " + e.what());
    }
}

} // namespace

void write_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                      const std::vector<ParamBlock>& blocks) {
    auto layout = nlohmann::json::array();
    for (const auto& b : blocks) {
        layout.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
    }
    header["blocks"] = layout;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write checkpoint " + path.string());
    }
    const std::string text = header.dump();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.put('\n');
    for (const auto& b : blocks) {
        for (double v : b.values) {
            write_le(out, v);
        }
    }
    if (!out) {
        throw Error("short write to checkpoint " + path.string());
    }
}

nlohmann::json read_checkpoint_header(const std::filesystem::path& path, const std::string& schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open checkpoint " + path.string());
    }
    auto header = parse_header(in, path);
    if (header.value("schema", std::string{}) != schema) {
        throw Error("checkpoint " + path.string() + ": expected schema " + schema);
    }
    return header;
}

void read_checkpoint_blocks(const std::filesystem::path& path, std::vector<ParamBlock>& blocks) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open checkpoint " + path.string());
    }
    const auto header = parse_header(in, path);
    const auto& layout = header.at("blocks");
    if (layout.size() != blocks.size()) {
        throw Error("checkpoint " + path.string() + ": block count mismatch");
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& decl = layout[i];
        if (decl.at("name").get<std::string>() != blocks[i].name ||
            decl.at("rows").get<Eigen::Index>() != blocks[i].rows ||
            decl.at("cols").get<Eigen::Index>() != blocks[i].cols) {
            throw Error("checkpoint " + path.string() + ": layout mismatch at block " + blocks[i].name);
        }
        for (double& v : blocks[i].values) {
            v = read_le(in);
        }
        if (!in) {
            throw Error("checkpoint " + path.string() + ": truncated payload in " + blocks[i].name);
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error("checkpoint " + path.string() + ": trailing bytes");
    }
}

} // namespace i2p
