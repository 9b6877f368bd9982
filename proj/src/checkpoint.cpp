#include "blocktraj/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace blocktraj {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const json& meta) {
    json header = meta;
    header["magic"] = "blocktraj-ckpt-v1";
    json arrays = json::array();
    std::size_t offset = 0;
    for (const std::string& name : params.names()) {
        const Tensor& t = params.value(name);
        arrays.push_back({{"name", name},
                          {"shape", {t.rows(), t.cols()}},
                          {"dtype", "f64"},
                          {"byte_offset", offset}});
        offset += t.numel() * sizeof(double);
    }
    header["arrays"] = std::move(arrays);
    header["payload_bytes"] = offset;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out << header.dump() << "\n";
    for (const std::string& name : params.names()) {
        const Tensor& t = params.value(name);
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.numel() * sizeof(double)));
    }
    if (!out) throw DataError("short write while saving checkpoint: " + path.string());
}

json load_checkpoint(const std::filesystem::path& path, ParamStore& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    std::string header_line;
    if (!std::getline(in, header_line))
        throw IntegrityError("checkpoint missing header: " + path.string());
    json header;
    try {
        header = json::parse(header_line);
    } catch (const json::exception& e) {
        throw IntegrityError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }
    if (header.value("magic", "") != "blocktraj-ckpt-v1")
        throw IntegrityError("not a blocktraj checkpoint: " + path.string());

    const std::streampos payload_start = in.tellg();
    for (const auto& arr : header.at("arrays")) {
        const std::string name = arr.at("name").get<std::string>();
        const auto shape = arr.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2) throw IntegrityError("bad array shape for " + name);
        if (arr.value("dtype", "") != "f64")
            throw IntegrityError("unsupported dtype for " + name);
        Tensor t(shape[0], shape[1]);
        in.seekg(payload_start + static_cast<std::streamoff>(arr.at("byte_offset").get<std::size_t>()));
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!in) throw IntegrityError("truncated checkpoint payload at array " + name);
        params.add(name, std::move(t));
    }
    return header;
}

}  // namespace blocktraj
