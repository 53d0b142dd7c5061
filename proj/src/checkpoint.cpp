#include "geodit/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace geodit {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'G', 'E', 'O', 'D', 'I', 'T', 'C', 'K'};

static_assert(sizeof(double) == 8);

template <typename T>
void put_le(std::string &out, T v)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string &in, std::size_t at)
{
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

std::string encode(int version, json header, const std::map<std::string, MatrixXd> &arrays)
{
    std::uint64_t offset = 0;
    json dir = json::array();
    for (const auto &[name, a] : arrays) {
        dir.push_back({{"name", name}, {"rows", a.rows()}, {"cols", a.cols()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(a.size()) * 8;
    }
    header["arrays"] = dir;
    header["payload_bytes"] = offset;
    const std::string text = header.dump(1);

    std::string out(kMagic, sizeof kMagic);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(version));
    put_le<std::uint64_t>(out, text.size());
    out += text;
    out.reserve(out.size() + offset);
    for (const auto &[name, a] : arrays)
        for (Eigen::Index i = 0; i < a.size(); ++i) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(a.data()[i]));
    return out;
}

struct Decoded {
    int version;
    json header;
    std::map<std::string, MatrixXd> arrays;
};

Decoded decode(const std::string &bytes, const std::filesystem::path &path)
{
    const std::string where = " (" + path.string() + ")";
    if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw CheckpointError("not a checkpoint file: bad magic" + where);
    const auto version = get_le<std::uint32_t>(bytes, 8);
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion) + where);
    const auto header_len = get_le<std::uint64_t>(bytes, 12);
    if (header_len > bytes.size() - 20) throw CheckpointError("corrupt header: length exceeds file" + where);
    Decoded d{static_cast<int>(version), {}, {}};
    try {
        d.header = json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const json::exception &e) {
        throw CheckpointError(std::string("corrupt header: ") + e.what() + where);
    }
    const std::size_t base = 20 + header_len;
    const std::uint64_t payload = d.header.value("payload_bytes", std::uint64_t{0});
    if (bytes.size() - base != payload)
        throw CheckpointError("payload length " + std::to_string(bytes.size() - base) + " bytes, header declares " +
                              std::to_string(payload) + where);
    try {
        for (const auto &e : d.header.at("arrays")) {
            const auto name = e.at("name").get<std::string>();
            const auto rows = e.at("rows").get<Eigen::Index>(), cols = e.at("cols").get<Eigen::Index>();
            const auto off = e.at("offset").get<std::uint64_t>();
            if (rows < 0 || cols < 0 || off + static_cast<std::uint64_t>(rows * cols) * 8 > payload)
                throw CheckpointError("array '" + name + "' lies outside the payload" + where);
            MatrixXd a(rows, cols);
            for (Eigen::Index i = 0; i < a.size(); ++i)
                a.data()[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, base + off + static_cast<std::size_t>(i) * 8));
            d.arrays.emplace(name, std::move(a));
        }
    } catch (const json::exception &e) {
        throw CheckpointError(std::string("corrupt array directory: ") + e.what() + where);
    }
    return d;
}

std::string read_file(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path &path, const std::string &bytes)
{
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("write failed for " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw CheckpointError("cannot write " + path.string() + ": " + ec.message());
}

} // namespace

void validate_checkpoint(const Checkpoint &ckpt)
{
    if (ckpt.version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version");
    try {
        ckpt.config.validate();
    } catch (const std::invalid_argument &e) {
        throw CheckpointError(std::string("invalid config: ") + e.what());
    }
    const GeoDiT<double> reference(ckpt.config, ckpt.stage);
    for (const auto &[name, e] : reference.params().entries()) {
        auto it = ckpt.arrays.find(name);
        if (it == ckpt.arrays.end()) throw CheckpointError("required array '" + name + "' is absent");
        if (it->second.rows() != e.value.rows() || it->second.cols() != e.value.cols())
            throw CheckpointError("array '" + name + "' has shape " + std::to_string(it->second.rows()) + "x" +
                                  std::to_string(it->second.cols()) + ", config implies " +
                                  std::to_string(e.value.rows()) + "x" + std::to_string(e.value.cols()));
    }
    for (const auto &[name, a] : ckpt.arrays)
        if (!reference.params().contains(name))
            throw CheckpointError("array '" + name + "' is not part of a " + to_string(ckpt.stage) + " model");
}

void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path)
{
    validate_checkpoint(ckpt);
    json header;
    header["format"] = "geodit-checkpoint";
    header["version"] = ckpt.version;
    header["stage"] = to_string(ckpt.stage);
    header["step"] = ckpt.step;
    header["config"] = ckpt.config.to_map();
    header["metadata"] = ckpt.metadata;
    write_file(path, encode(ckpt.version, header, ckpt.arrays));
}

Checkpoint load_checkpoint(const std::filesystem::path &path)
{
    auto d = decode(read_file(path), path);
    Checkpoint c;
    c.version = d.version;
    try {
        if (d.header.at("version").get<int>() != d.version) throw CheckpointError("header version disagrees with preamble");
        c.stage = parse_stage(d.header.at("stage").get<std::string>());
        c.step = d.header.at("step").get<long>();
        c.config = ModelConfig::from_map(d.header.at("config").get<std::map<std::string, std::string>>());
        if (d.header.contains("metadata"))
            c.metadata = d.header.at("metadata").get<std::map<std::string, std::string>>();
    } catch (const json::exception &e) {
        throw CheckpointError(std::string("corrupt header: ") + e.what() + " (" + path.string() + ")");
    } catch (const std::invalid_argument &e) {
        throw CheckpointError(std::string("corrupt header: ") + e.what() + " (" + path.string() + ")");
    }
    c.arrays = std::move(d.arrays);
    validate_checkpoint(c);
    return c;
}

template <typename Scalar>
Checkpoint make_checkpoint(const GeoDiT<Scalar> &model, long step, std::map<std::string, std::string> metadata)
{
    Checkpoint c;
    c.config = model.config();
    c.stage = model.stage();
    c.step = step;
    c.metadata = std::move(metadata);
    for (const auto &[name, e] : model.params().entries()) c.arrays.emplace(name, e.value.template cast<double>());
    return c;
}

template <typename Scalar>
GeoDiT<Scalar> model_from_checkpoint(const Checkpoint &ckpt)
{
    validate_checkpoint(ckpt);
    GeoDiT<Scalar> model(ckpt.config, ckpt.stage);
    for (const auto &[name, a] : ckpt.arrays) model.params().value(name) = a.template cast<Scalar>();
    return model;
}

void save_array_file(const std::filesystem::path &path, const std::string &header_json,
                     const std::map<std::string, MatrixXd> &arrays)
{
    json header = json::parse(header_json);
    if (!header.is_object()) throw std::invalid_argument("save_array_file: header must be an object");
    header["version"] = kCheckpointVersion;
    write_file(path, encode(kCheckpointVersion, header, arrays));
}

std::map<std::string, MatrixXd> load_array_file(const std::filesystem::path &path, std::string *header_json)
{
    auto d = decode(read_file(path), path);
    if (header_json) {
        d.header.erase("arrays");
        *header_json = d.header.dump();
    }
    return std::move(d.arrays);
}

template Checkpoint make_checkpoint<double>(const GeoDiT<double> &, long, std::map<std::string, std::string>);
template Checkpoint make_checkpoint<float>(const GeoDiT<float> &, long, std::map<std::string, std::string>);
template GeoDiT<double> model_from_checkpoint<double>(const Checkpoint &);
template GeoDiT<float> model_from_checkpoint<float>(const Checkpoint &);

} // namespace geodit
