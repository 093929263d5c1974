#pragma once

// Volume ingestion and dataset assembly.
//
// File formats handled here:
//   - NIfTI-1, uncompressed single-file: 348-byte header + payload at
//     vox_offset. Little/big endian auto-detected via sizeof_hdr; datatypes
//     int16 (4), float32 (16), float64 (64); scl_slope/scl_inter applied when
//     slope != 0. Voxels are stored x-fastest; volumes are exposed as
//     row-major [X,Y,Z] tensors.
//   - ".rt" raw tensors: magic "RT01", u8 dtype (1=f32, 2=f64), u8 rank,
//     rank x u32 little-endian extents, row-major little-endian payload.
//   - PGM (P5), 8- or 16-bit, for 2-D fixtures.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mlpsr/errors.hpp"
#include "mlpsr/tensor.hpp"

namespace mlpsr {

// ---------------------------------------------------------------------------
// NIfTI-1

struct Nifti1Header {
    std::int32_t sizeof_hdr = 348;
    std::array<std::int16_t, 8> dim{};
    std::int16_t datatype = 0;
    std::int16_t bitpix = 0;
    std::array<float, 8> pixdim{};
    float vox_offset = 352.0f;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    std::array<char, 4> magic{};  // "n+1\0" or "ni1\0"
    bool was_swapped = false;     // source bytes were opposite-endian

    // Full endian-normalized header record; parsed fields above are views
    // into it. Kept so the header round-trips byte-exactly.
    std::array<unsigned char, 348> raw{};
};

struct Volume {
    Tensor<double> data;  // [X,Y,Z]
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm
    std::string source_id;
};

Nifti1Header parse_nifti1_header(const std::vector<unsigned char>& bytes);

// Re-encodes the parsed fields into the retained raw record.
std::array<unsigned char, 348> serialize_nifti1_header(const Nifti1Header& hdr);

Volume parse_nifti1(const std::vector<unsigned char>& bytes, const std::string& source_id);
Volume read_nifti(const std::string& path);
void write_nifti(const std::string& path, const Volume& v);

// ---------------------------------------------------------------------------
// raw tensors (".rt")

enum class RtDtype : std::uint8_t { F32 = 1, F64 = 2 };

void write_rt_f32(const std::string& path, const Tensor<float>& t);
void write_rt_f64(const std::string& path, const Tensor<double>& t);
std::vector<unsigned char> encode_rt_f32(const Tensor<float>& t);
std::vector<unsigned char> encode_rt_f64(const Tensor<double>& t);

struct RtTensor {
    RtDtype dtype;
    Tensor<float> f32;   // filled when dtype == F32
    Tensor<double> f64;  // filled when dtype == F64

    Tensor<double> as_f64() const;
    Tensor<float> as_f32() const;
};

RtTensor decode_rt(const unsigned char* bytes, std::size_t len);
RtTensor read_rt(const std::string& path);
Tensor<double> read_rt_f64(const std::string& path);  // converts f32 payloads

template <class T>
void write_rt(const std::string& path, const Tensor<T>& t) {
    if constexpr (std::is_same_v<T, float>)
        write_rt_f32(path, t);
    else
        write_rt_f64(path, t);
}

template <class T>
Tensor<T> read_rt_as(const std::string& path) {
    RtTensor rt = read_rt(path);
    if constexpr (std::is_same_v<T, float>)
        return rt.as_f32();
    else
        return rt.as_f64();
}

// ---------------------------------------------------------------------------
// PGM fixtures

struct PgmImage {
    Tensor<double> pixels;  // raw integer sample values
    unsigned max_val = 255;
};

PgmImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor<double>& img, unsigned max_val = 255);

// ---------------------------------------------------------------------------
// volume preparation

// Min-max normalization to [0,1]; a constant volume maps to all zeros.
Volume normalize_volume(const Volume& v);

// Slices along the first voxel axis (configurable); a slice is blank iff its
// max intensity is below the threshold or its variance is zero.
std::vector<Tensor<double>> extract_sagittal_slices(const Volume& v, double blank_threshold = 0.01,
                                                    std::size_t slice_axis = 0);

// ---------------------------------------------------------------------------
// dataset

struct SlicePair {
    std::string id;
    int fold = 0;
    Tensor<double> lr;
    Tensor<double> hr;
};

struct SliceDataset {
    std::vector<SlicePair> pairs;
    int folds = 1;
};

// Volume-level fold assignment (volume i -> fold i mod k); LR generated by
// degrading the slice axis by `factor`.
SliceDataset build_dataset(const std::vector<Volume>& volumes, int folds,
                           std::size_t factor = 4, double blank_threshold = 0.01);

// Manifest: one line per pair, "id<TAB>fold<TAB>lr_path<TAB>hr_path". Paths
// are stored relative to the manifest location.
void write_manifest(const std::string& path, const std::vector<std::array<std::string, 4>>& rows);
std::vector<std::array<std::string, 4>> read_manifest(const std::string& path);

// Loads the pairs named by a manifest (paths resolved against its directory).
SliceDataset load_dataset(const std::string& manifest_path);

// ---------------------------------------------------------------------------
// small file helpers

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace mlpsr
