#include "pssc/npz.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>

#include "pssc/error.hpp"

namespace pssc {
namespace {

constexpr std::uint32_t kLocalSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint32_t kZip64EndSig = 0x06064b50;
constexpr std::uint32_t kZip64LocatorSig = 0x07064b50;
constexpr char kNpyMagic[] = "\x93NUMPY";

std::uint64_t read_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\n");
  const auto e = s.find_last_not_of(" \t\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

// Value text following 'key': in a numpy header dict literal.
std::string header_field(const std::string& header, const std::string& key) {
  const auto k = header.find("'" + key + "'");
  if (k == std::string::npos) throw IoError("npy header lacks '" + key + "'");
  auto colon = header.find(':', k);
  if (colon == std::string::npos) throw IoError("malformed npy header");
  std::size_t start = colon + 1;
  while (start < header.size() && header[start] == ' ') ++start;
  if (start >= header.size()) throw IoError("malformed npy header");
  char open = header[start];
  std::size_t end;
  if (open == '\'') {
    end = header.find('\'', start + 1);
    if (end == std::string::npos) throw IoError("malformed npy header");
    return header.substr(start + 1, end - start - 1);
  }
  if (open == '(') {
    end = header.find(')', start);
    if (end == std::string::npos) throw IoError("malformed npy header");
    return header.substr(start, end - start + 1);
  }
  end = header.find_first_of(",}", start);
  return trim(header.substr(start, end - start));
}

struct Entry {
  std::string name;
  std::uint16_t method = 0;
  std::uint64_t compressed = 0;
  std::uint64_t uncompressed = 0;
  std::uint64_t local_offset = 0;
  std::uint32_t crc = 0;
};

class ZipReader {
 public:
  explicit ZipReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path);
    in_.seekg(0, std::ios::end);
    size_ = static_cast<std::uint64_t>(in_.tellg());
    read_directory();
  }

  const std::vector<Entry>& entries() const { return entries_; }

  std::vector<std::uint8_t> extract(const Entry& e) {
    std::uint8_t local[30];
    read_at(e.local_offset, local, sizeof local);
    if (read_le(local, 4) != kLocalSig) throw IoError(path_ + ": bad local header for " + e.name);
    const std::uint64_t data_at = e.local_offset + 30 + read_le(local + 26, 2) + read_le(local + 28, 2);
    if (e.uncompressed > std::numeric_limits<std::size_t>::max() / 2) throw IoError(path_ + ": member too large");
    std::vector<std::uint8_t> out(static_cast<std::size_t>(e.uncompressed));
    if (e.method == 0) {
      if (e.compressed != e.uncompressed) throw IoError(path_ + ": stored member size mismatch");
      read_at(data_at, out.data(), out.size());
    } else if (e.method == 8) {
      inflate_member(data_at, e, out);
    } else {
      throw IoError(path_ + ": unsupported compression method " + std::to_string(e.method) + " for " + e.name);
    }
    std::uint32_t crc = 0;
    for (std::size_t off = 0; off < out.size();) {
      const auto chunk = static_cast<uInt>(std::min<std::size_t>(out.size() - off, 1u << 30));
      crc = static_cast<std::uint32_t>(crc32(crc, out.data() + off, chunk));
      off += chunk;
    }
    if (crc != e.crc) throw IoError(path_ + ": CRC mismatch in " + e.name + " (corrupt archive)");
    return out;
  }

 private:
  void read_at(std::uint64_t offset, void* dst, std::size_t n) {
    if (offset + n > size_) throw IoError(path_ + ": truncated archive");
    in_.seekg(static_cast<std::streamoff>(offset));
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in_) throw IoError(path_ + ": read error");
  }

  void read_directory() {
    const std::uint64_t tail = std::min<std::uint64_t>(size_, 65536 + 22);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(tail));
    read_at(size_ - tail, buf.data(), buf.size());
    std::int64_t eocd = -1;
    for (std::int64_t i = static_cast<std::int64_t>(buf.size()) - 22; i >= 0; --i) {
      if (read_le(&buf[static_cast<std::size_t>(i)], 4) == kEndSig) {
        eocd = i;
        break;
      }
    }
    if (eocd < 0) throw IoError(path_ + ": not a zip archive (no end-of-directory record)");
    const std::uint8_t* e = &buf[static_cast<std::size_t>(eocd)];
    std::uint64_t count = read_le(e + 10, 2);
    std::uint64_t dir_size = read_le(e + 12, 4);
    std::uint64_t dir_offset = read_le(e + 16, 4);
    const std::uint64_t eocd_abs = size_ - tail + static_cast<std::uint64_t>(eocd);
    if (eocd_abs >= 20) {
      std::uint8_t loc[20];
      read_at(eocd_abs - 20, loc, sizeof loc);
      if (read_le(loc, 4) == kZip64LocatorSig) {
        std::uint8_t z[56];
        read_at(read_le(loc + 8, 8), z, sizeof z);
        if (read_le(z, 4) != kZip64EndSig) throw IoError(path_ + ": bad ZIP64 end record");
        count = read_le(z + 32, 8);
        dir_size = read_le(z + 40, 8);
        dir_offset = read_le(z + 48, 8);
      }
    }
    std::vector<std::uint8_t> dir(static_cast<std::size_t>(dir_size));
    read_at(dir_offset, dir.data(), dir.size());
    std::size_t p = 0;
    for (std::uint64_t i = 0; i < count; ++i) {
      if (p + 46 > dir.size() || read_le(&dir[p], 4) != kCentralSig) {
        throw IoError(path_ + ": corrupt central directory");
      }
      const std::uint8_t* h = &dir[p];
      Entry en;
      en.method = static_cast<std::uint16_t>(read_le(h + 10, 2));
      en.crc = static_cast<std::uint32_t>(read_le(h + 16, 4));
      en.compressed = read_le(h + 20, 4);
      en.uncompressed = read_le(h + 24, 4);
      const std::size_t name_len = read_le(h + 28, 2), extra_len = read_le(h + 30, 2),
                        comment_len = read_le(h + 32, 2);
      en.local_offset = read_le(h + 42, 4);
      if (p + 46 + name_len + extra_len > dir.size()) throw IoError(path_ + ": corrupt central directory");
      en.name.assign(reinterpret_cast<const char*>(h + 46), name_len);
      // ZIP64 extended information replaces saturated 32-bit fields in order.
      const std::uint8_t* x = h + 46 + name_len;
      for (std::size_t q = 0; q + 4 <= extra_len;) {
        const auto id = read_le(x + q, 2);
        const auto len = read_le(x + q + 2, 2);
        if (id == 0x0001) {
          std::size_t r = q + 4;
          auto take = [&](std::uint64_t& field) {
            if (field == 0xffffffffu && r + 8 <= q + 4 + len) {
              field = read_le(x + r, 8);
              r += 8;
            }
          };
          take(en.uncompressed);
          take(en.compressed);
          take(en.local_offset);
        }
        q += 4 + len;
      }
      entries_.push_back(std::move(en));
      p += 46 + name_len + extra_len + comment_len;
    }
  }

  void inflate_member(std::uint64_t data_at, const Entry& e, std::vector<std::uint8_t>& out) {
    z_stream zs{};
    if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw IoError("zlib initialisation failed");
    std::vector<std::uint8_t> chunk(1 << 20);
    std::uint64_t remaining = e.compressed;
    std::uint64_t pos = data_at;
    std::size_t produced = 0;
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
      if (zs.avail_in == 0) {
        if (remaining == 0) break;
        const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, chunk.size()));
        read_at(pos, chunk.data(), n);
        pos += n;
        remaining -= n;
        zs.next_in = chunk.data();
        zs.avail_in = static_cast<uInt>(n);
      }
      const std::size_t space = std::min<std::size_t>(out.size() - produced, 1u << 30);
      zs.next_out = out.data() + produced;
      zs.avail_out = static_cast<uInt>(space);
      rc = ::inflate(&zs, Z_NO_FLUSH);
      produced += space - zs.avail_out;
      if (rc != Z_OK && rc != Z_STREAM_END && !(rc == Z_BUF_ERROR && zs.avail_in == 0)) {
        inflateEnd(&zs);
        throw IoError(path_ + ": corrupt deflate stream in " + e.name);
      }
      if (space == 0 && rc != Z_STREAM_END) break;
    }
    inflateEnd(&zs);
    if (produced != out.size()) throw IoError(path_ + ": truncated member " + e.name);
  }

  std::string path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
  std::vector<Entry> entries_;
};

std::vector<std::uint8_t> deflate_bytes(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw IoError("zlib initialisation failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = ::deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw IoError("deflate failed");
  out.resize(zs.total_out);
  return out;
}

}  // namespace

std::size_t NpyArray::num_elements() const {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::size_t NpyArray::item_size() const {
  if (descr.size() < 3) throw IoError("bad npy dtype '" + descr + "'");
  return static_cast<std::size_t>(std::stoul(descr.substr(2)));
}

NpyArray parse_npy(std::vector<std::uint8_t> file) {
  if (file.size() < 10 || std::memcmp(file.data(), kNpyMagic, 6) != 0) throw IoError("not an npy array");
  const int major = file[6];
  std::size_t header_len, header_at;
  if (major == 1) {
    header_len = read_le(&file[8], 2);
    header_at = 10;
  } else if (major == 2 || major == 3) {
    if (file.size() < 12) throw IoError("truncated npy header");
    header_len = read_le(&file[8], 4);
    header_at = 12;
  } else {
    throw IoError("unsupported npy version " + std::to_string(major));
  }
  if (header_at + header_len > file.size()) throw IoError("truncated npy header");
  const std::string header(reinterpret_cast<const char*>(&file[header_at]), header_len);
  NpyArray a;
  a.descr = header_field(header, "descr");
  a.fortran_order = header_field(header, "fortran_order") == "True";
  std::string shape = header_field(header, "shape");
  shape = shape.substr(1, shape.size() - 2);
  std::size_t pos = 0;
  while (pos < shape.size()) {
    auto comma = shape.find(',', pos);
    const std::string tok = trim(shape.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (!tok.empty()) a.shape.push_back(static_cast<std::size_t>(std::stoull(tok)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  const std::size_t data_at = header_at + header_len;
  const std::size_t expected = a.num_elements() * a.item_size();
  if (file.size() - data_at != expected) {
    throw IoError("npy payload has " + std::to_string(file.size() - data_at) + " bytes, expected " +
                  std::to_string(expected));
  }
  file.erase(file.begin(), file.begin() + static_cast<std::ptrdiff_t>(data_at));
  a.bytes = std::move(file);
  return a;
}

std::vector<std::uint8_t> encode_npy(const NpyArray& a) {
  std::string shape = "(";
  for (std::size_t i = 0; i < a.shape.size(); ++i) shape += std::to_string(a.shape[i]) + ", ";
  if (a.shape.size() > 1) shape.resize(shape.size() - 2);
  else if (a.shape.size() == 1) shape.resize(shape.size() - 1);
  shape += ")";
  std::string header = "{'descr': '" + a.descr + "', 'fortran_order': " + (a.fortran_order ? "True" : "False") +
                       ", 'shape': " + shape + ", }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::vector<std::uint8_t> out(kNpyMagic, kNpyMagic + 6);
  out.push_back(1);
  out.push_back(0);
  put_le(out, header.size(), 2);
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  return out;
}

std::map<std::string, NpyArray> read_npz(const std::string& path, const std::vector<std::string>& keys) {
  ZipReader zip(path);
  std::map<std::string, NpyArray> out;
  for (const auto& e : zip.entries()) {
    std::string key = e.name;
    if (key.size() > 4 && key.ends_with(".npy")) key.resize(key.size() - 4);
    if (!keys.empty() && std::find(keys.begin(), keys.end(), key) == keys.end()) continue;
    try {
      out.emplace(key, parse_npy(zip.extract(e)));
    } catch (const IoError& err) {
      throw IoError(path + ": member '" + key + "': " + err.what());
    }
  }
  for (const auto& k : keys) {
    if (!out.count(k)) throw IoError(path + ": missing array '" + k + "'");
  }
  return out;
}

void write_npz(const std::string& path, const std::map<std::string, NpyArray>& arrays, bool compress) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path);
  std::vector<std::uint8_t> central;
  std::uint64_t offset = 0;
  for (const auto& [key, array] : arrays) {
    const std::string name = key + ".npy";
    const std::vector<std::uint8_t> raw = encode_npy(array);
    const std::vector<std::uint8_t> body = compress ? deflate_bytes(raw) : raw;
    if (raw.size() >= 0xffffffffu || offset >= 0xffffffffu) throw IoError("npz writer does not emit ZIP64");
    const auto crc = static_cast<std::uint32_t>(crc32(0, raw.data(), static_cast<uInt>(raw.size())));
    const std::uint16_t method = compress ? 8 : 0;
    std::vector<std::uint8_t> local;
    put_le(local, kLocalSig, 4);
    put_le(local, 20, 2);
    put_le(local, 0, 2);
    put_le(local, method, 2);
    put_le(local, 0, 4);  // time/date left at zero for byte-stable output
    put_le(local, crc, 4);
    put_le(local, body.size(), 4);
    put_le(local, raw.size(), 4);
    put_le(local, name.size(), 2);
    put_le(local, 0, 2);
    local.insert(local.end(), name.begin(), name.end());
    out.write(reinterpret_cast<const char*>(local.data()), static_cast<std::streamsize>(local.size()));
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));

    put_le(central, kCentralSig, 4);
    put_le(central, 20, 2);
    put_le(central, 20, 2);
    put_le(central, 0, 2);
    put_le(central, method, 2);
    put_le(central, 0, 4);
    put_le(central, crc, 4);
    put_le(central, body.size(), 4);
    put_le(central, raw.size(), 4);
    put_le(central, name.size(), 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 4);
    put_le(central, offset, 4);
    central.insert(central.end(), name.begin(), name.end());
    offset += local.size() + body.size();
  }
  std::vector<std::uint8_t> end;
  put_le(end, kEndSig, 4);
  put_le(end, 0, 4);
  put_le(end, arrays.size(), 2);
  put_le(end, arrays.size(), 2);
  put_le(end, central.size(), 4);
  put_le(end, offset, 4);
  put_le(end, 0, 2);
  out.write(reinterpret_cast<const char*>(central.data()), static_cast<std::streamsize>(central.size()));
  out.write(reinterpret_cast<const char*>(end.data()), static_cast<std::streamsize>(end.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace pssc
