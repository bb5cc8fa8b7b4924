#include "fffvdi/archive.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace fffvdi::archive {
namespace {

constexpr uint32_t kLocalSig = 0x04034b50;
constexpr uint32_t kCentralSig = 0x02014b50;
constexpr uint32_t kEndSig = 0x06054b50;

void put16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

uint16_t get16(const std::string& s, size_t at) {
    require(at + 2 <= s.size(), ErrorKind::Data, "archive: truncated");
    return static_cast<uint16_t>(static_cast<uint8_t>(s[at]) | (static_cast<uint8_t>(s[at + 1]) << 8));
}

uint32_t get32(const std::string& s, size_t at) {
    require(at + 4 <= s.size(), ErrorKind::Data, "archive: truncated");
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        v = (v << 8) | static_cast<uint8_t>(s[at + i]);
    }
    return v;
}

struct DtypeCode {
    torch::Dtype dtype;
    const char* descr;
};

constexpr DtypeCode kDtypes[] = {
    {torch::kFloat32, "<f4"}, {torch::kFloat64, "<f8"}, {torch::kInt64, "<i8"},
    {torch::kInt32, "<i4"},   {torch::kUInt8, "|u1"},   {torch::kBool, "|b1"},
};

std::string inflate_raw(const std::string& compressed, size_t expected) {
    std::string out(expected, '\0');
    z_stream zs{};
    require(inflateInit2(&zs, -MAX_WBITS) == Z_OK, ErrorKind::Data, "archive: inflateInit failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
    zs.avail_in = static_cast<uInt>(compressed.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    int rc = inflate(&zs, Z_FINISH);
    inflateEnd(&zs);
    require(rc == Z_STREAM_END, ErrorKind::Data, "archive: corrupt deflate stream");
    return out;
}

}  // namespace

std::string encode_npy(const torch::Tensor& tensor) {
    auto t = tensor.detach().cpu().contiguous();
    const char* descr = nullptr;
    for (const auto& d : kDtypes) {
        if (d.dtype == t.scalar_type()) {
            descr = d.descr;
        }
    }
    require(descr != nullptr, ErrorKind::Data, "npy: unsupported dtype");

    // numpy tuple repr: "()", "(n,)", "(a, b, c)"
    std::string shape = "(";
    for (int64_t i = 0; i < t.dim(); ++i) {
        shape += (i ? ", " : "") + std::to_string(t.size(i));
    }
    shape += t.dim() == 1 ? ",)" : ")";
    std::string header = std::string("{'descr': '") + descr + "', 'fortran_order': False, 'shape': " + shape + ", }";
    size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');

    std::string out("\x93NUMPY\x01\x00", 8);
    put16(out, static_cast<uint16_t>(header.size()));
    out += header;
    out.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
    return out;
}

torch::Tensor decode_npy(const std::string& bytes) {
    require(bytes.size() >= 10 && bytes.compare(0, 6, "\x93NUMPY") == 0, ErrorKind::Data, "npy: bad magic");
    int major = static_cast<uint8_t>(bytes[6]);
    size_t header_len = 0;
    size_t offset = 0;
    if (major == 1) {
        header_len = get16(bytes, 8);
        offset = 10;
    } else {
        header_len = get32(bytes, 8);
        offset = 12;
    }
    require(offset + header_len <= bytes.size(), ErrorKind::Data, "npy: truncated header");
    std::string header = bytes.substr(offset, header_len);

    auto field = [&](const std::string& key) {
        auto at = header.find("'" + key + "'");
        require(at != std::string::npos, ErrorKind::Data, "npy: header lacks " + key);
        return header.substr(header.find(':', at) + 1);
    };
    std::string descr_field = field("descr");
    auto q0 = descr_field.find('\'');
    auto q1 = descr_field.find('\'', q0 + 1);
    std::string descr = descr_field.substr(q0 + 1, q1 - q0 - 1);
    require(field("fortran_order").find("False") < field("fortran_order").find(','), ErrorKind::Data,
            "npy: fortran order unsupported");

    std::string shape_field = field("shape");
    std::vector<int64_t> shape;
    {
        auto open = shape_field.find('(');
        auto close = shape_field.find(')');
        std::stringstream ss(shape_field.substr(open + 1, close - open - 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.find_first_not_of(' ') != std::string::npos) {
                shape.push_back(std::stoll(item));
            }
        }
    }

    torch::Dtype dtype = torch::kFloat32;
    bool found = false;
    for (const auto& d : kDtypes) {
        if (descr == d.descr || (descr.size() == 3 && descr[0] == '=' && descr.substr(1) == std::string(d.descr).substr(1))) {
            dtype = d.dtype;
            found = true;
        }
    }
    require(found, ErrorKind::Data, "npy: unsupported descr " + descr);

    auto out = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    size_t nbytes = static_cast<size_t>(out.numel()) * out.element_size();
    size_t data_at = offset + header_len;
    require(data_at + nbytes <= bytes.size(), ErrorKind::Data, "npy: truncated data");
    std::memcpy(out.data_ptr(), bytes.data() + data_at, nbytes);
    return out;
}

void save(const std::filesystem::path& path, const Archive& archive) {
    struct Member {
        std::string name;
        std::string data;
    };
    std::vector<Member> members;
    for (const auto& [name, tensor] : archive.arrays) {
        members.push_back({name + ".npy", encode_npy(tensor)});
    }
    for (const auto& [name, text] : archive.texts) {
        members.push_back({name, text});
    }

    std::string blob;
    std::string central;
    for (const auto& m : members) {
        require(m.data.size() < 0xffffffffull, ErrorKind::Data, "archive: member too large");
        uint32_t crc = static_cast<uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(m.data.data()),
                                                   static_cast<uInt>(m.data.size())));
        auto size = static_cast<uint32_t>(m.data.size());
        auto local_at = static_cast<uint32_t>(blob.size());

        put32(blob, kLocalSig);
        put16(blob, 20);
        put16(blob, 0);
        put16(blob, 0);       // stored
        put16(blob, 0);       // mtime
        put16(blob, 0x21);    // mdate 1980-01-01, fixed for reproducible bytes
        put32(blob, crc);
        put32(blob, size);
        put32(blob, size);
        put16(blob, static_cast<uint16_t>(m.name.size()));
        put16(blob, 0);
        blob += m.name;
        blob += m.data;

        put32(central, kCentralSig);
        put16(central, 20);
        put16(central, 20);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0x21);
        put32(central, crc);
        put32(central, size);
        put32(central, size);
        put16(central, static_cast<uint16_t>(m.name.size()));
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put32(central, 0);
        put32(central, local_at);
        central += m.name;
    }
    auto central_at = static_cast<uint32_t>(blob.size());
    blob += central;
    put32(blob, kEndSig);
    put16(blob, 0);
    put16(blob, 0);
    put16(blob, static_cast<uint16_t>(members.size()));
    put16(blob, static_cast<uint16_t>(members.size()));
    put32(blob, static_cast<uint32_t>(central.size()));
    put32(blob, central_at);
    put16(blob, 0);

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(f), ErrorKind::Data, "archive: cannot write " + tmp.string());
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        require(static_cast<bool>(f), ErrorKind::Data, "archive: write failed " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Archive load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Data, "archive: cannot open " + path.string());
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(blob.size() >= 22, ErrorKind::Data, "archive: too small " + path.string());

    size_t end_at = std::string::npos;
    for (size_t i = blob.size() - 22 + 1; i-- > 0;) {
        if (get32(blob, i) == kEndSig) {
            end_at = i;
            break;
        }
    }
    require(end_at != std::string::npos, ErrorKind::Data, "archive: no end record in " + path.string());
    uint16_t count = get16(blob, end_at + 10);
    size_t at = get32(blob, end_at + 16);

    Archive out;
    for (uint16_t k = 0; k < count; ++k) {
        require(get32(blob, at) == kCentralSig, ErrorKind::Data, "archive: bad central record");
        uint16_t method = get16(blob, at + 10);
        uint32_t crc = get32(blob, at + 16);
        uint32_t csize = get32(blob, at + 20);
        uint32_t usize = get32(blob, at + 24);
        uint16_t name_len = get16(blob, at + 28);
        uint16_t extra_len = get16(blob, at + 30);
        uint16_t comment_len = get16(blob, at + 32);
        uint32_t local_at = get32(blob, at + 42);
        std::string name = blob.substr(at + 46, name_len);
        at += 46 + name_len + extra_len + comment_len;

        require(get32(blob, local_at) == kLocalSig, ErrorKind::Data, "archive: bad local record");
        size_t data_at = local_at + 30 + get16(blob, local_at + 26) + get16(blob, local_at + 28);
        require(data_at + csize <= blob.size(), ErrorKind::Data, "archive: truncated member " + name);
        std::string data = blob.substr(data_at, csize);
        if (method == 8) {
            data = inflate_raw(data, usize);
        } else {
            require(method == 0, ErrorKind::Data, "archive: unsupported compression in " + name);
        }
        uint32_t got = static_cast<uint32_t>(
            crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
        require(got == crc, ErrorKind::Data, "archive: crc mismatch in " + name);

        if (name.size() > 4 && name.ends_with(".npy")) {
            out.arrays[name.substr(0, name.size() - 4)] = decode_npy(data);
        } else {
            out.texts[name] = std::move(data);
        }
    }
    return out;
}

void store_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& p : module.named_parameters(true)) {
        archive.arrays[prefix + "/" + p.key()] = p.value().detach().cpu().clone();
    }
    for (const auto& b : module.named_buffers(true)) {
        archive.arrays[prefix + "/" + b.key()] = b.value().detach().cpu().clone();
    }
}

void restore_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& name, torch::Tensor& target) {
        auto it = archive.arrays.find(prefix + "/" + name);
        require(it != archive.arrays.end(), ErrorKind::Data, "checkpoint: missing tensor " + prefix + "/" + name);
        require(it->second.sizes() == target.sizes(), ErrorKind::Data,
                "checkpoint: shape mismatch for " + prefix + "/" + name + ": " + shape_str(it->second) + " vs " +
                    shape_str(target));
        target.copy_(it->second.to(target.scalar_type()));
    };
    for (auto& p : module.named_parameters(true)) {
        assign(p.key(), p.value());
    }
    for (auto& b : module.named_buffers(true)) {
        assign(b.key(), b.value());
    }
}

}  // namespace fffvdi::archive
