#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace pssc {

/// One NPY array: dtype descriptor as written by numpy (e.g. "|u1", "<i8"),
/// shape, and the raw element bytes in file order.
struct NpyArray {
  std::string descr;
  std::vector<std::size_t> shape;
  bool fortran_order = false;
  std::vector<std::uint8_t> bytes;

  std::size_t num_elements() const;
  std::size_t item_size() const;
};

NpyArray parse_npy(std::vector<std::uint8_t> file_bytes);
std::vector<std::uint8_t> encode_npy(const NpyArray& array);

/// Reads the named arrays (all arrays if `keys` is empty) from an NPZ zip
/// container. Supports stored and deflated members and ZIP64 records.
/// Throws IoError on missing files, missing keys, or malformed containers.
std::map<std::string, NpyArray> read_npz(const std::string& path, const std::vector<std::string>& keys = {});

/// Writes an NPZ container, deflating members when `compress` is set.
void write_npz(const std::string& path, const std::map<std::string, NpyArray>& arrays, bool compress);

}  // namespace pssc
