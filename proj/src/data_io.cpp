#include "mlpsr/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mlpsr/resample.hpp"

namespace fs = std::filesystem;

namespace mlpsr {

namespace {

// little-endian field access into a byte buffer
template <class T>
T load_le(const unsigned char* p) {
    T v{};
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
}

template <class T>
void store_le(unsigned char* p, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    std::memcpy(p, b, sizeof(T));
}

void swap_bytes(unsigned char* p, std::size_t width) { std::reverse(p, p + width); }

// Byte-swaps every multi-byte numeric field of a 348-byte header record.
void swap_header_fields(std::array<unsigned char, 348>& raw) {
    auto sw = [&raw](std::size_t off, std::size_t width, std::size_t count = 1) {
        for (std::size_t i = 0; i < count; ++i) swap_bytes(raw.data() + off + i * width, width);
    };
    sw(0, 4);        // sizeof_hdr
    sw(32, 4);       // extents
    sw(36, 2);       // session_error
    sw(40, 2, 8);    // dim
    sw(56, 4, 3);    // intent_p1..p3
    sw(68, 2);       // intent_code
    sw(70, 2);       // datatype
    sw(72, 2);       // bitpix
    sw(74, 2);       // slice_start
    sw(76, 4, 8);    // pixdim
    sw(108, 4);      // vox_offset
    sw(112, 4);      // scl_slope
    sw(116, 4);      // scl_inter
    sw(120, 2);      // slice_end
    sw(124, 4, 4);   // cal_max, cal_min, slice_duration, toffset
    sw(140, 4, 2);   // glmax, glmin
    sw(252, 2, 2);   // qform_code, sform_code
    sw(256, 4, 6);   // quaternion + offsets
    sw(280, 4, 12);  // srow_x/y/z
}

}  // namespace

Nifti1Header parse_nifti1_header(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 348) throw ParseError("nifti: truncated header (need 348 bytes)");
    Nifti1Header h;
    std::memcpy(h.raw.data(), bytes.data(), 348);
    std::int32_t size = load_le<std::int32_t>(h.raw.data());
    if (size != 348) {
        std::array<unsigned char, 348> swapped = h.raw;
        swap_header_fields(swapped);
        if (load_le<std::int32_t>(swapped.data()) != 348)
            throw ParseError("nifti: bad header size (sizeof_hdr != 348 in either byte order)");
        h.raw = swapped;
        h.was_swapped = true;
    }
    std::memcpy(h.magic.data(), h.raw.data() + 344, 4);
    const bool n1 = std::memcmp(h.magic.data(), "n+1\0", 4) == 0;
    const bool ni1 = std::memcmp(h.magic.data(), "ni1\0", 4) == 0;
    if (!n1 && !ni1) throw ParseError("nifti: bad magic");
    h.sizeof_hdr = 348;
    for (int i = 0; i < 8; ++i) h.dim[i] = load_le<std::int16_t>(h.raw.data() + 40 + 2 * i);
    h.datatype = load_le<std::int16_t>(h.raw.data() + 70);
    h.bitpix = load_le<std::int16_t>(h.raw.data() + 72);
    for (int i = 0; i < 8; ++i) h.pixdim[i] = load_le<float>(h.raw.data() + 76 + 4 * i);
    h.vox_offset = load_le<float>(h.raw.data() + 108);
    h.scl_slope = load_le<float>(h.raw.data() + 112);
    h.scl_inter = load_le<float>(h.raw.data() + 116);
    return h;
}

std::array<unsigned char, 348> serialize_nifti1_header(const Nifti1Header& hdr) {
    std::array<unsigned char, 348> out = hdr.raw;
    store_le<std::int32_t>(out.data(), hdr.sizeof_hdr);
    for (int i = 0; i < 8; ++i) store_le<std::int16_t>(out.data() + 40 + 2 * i, hdr.dim[i]);
    store_le<std::int16_t>(out.data() + 70, hdr.datatype);
    store_le<std::int16_t>(out.data() + 72, hdr.bitpix);
    for (int i = 0; i < 8; ++i) store_le<float>(out.data() + 76 + 4 * i, hdr.pixdim[i]);
    store_le<float>(out.data() + 108, hdr.vox_offset);
    store_le<float>(out.data() + 112, hdr.scl_slope);
    store_le<float>(out.data() + 116, hdr.scl_inter);
    std::memcpy(out.data() + 344, hdr.magic.data(), 4);
    return out;
}

Volume parse_nifti1(const std::vector<unsigned char>& bytes, const std::string& source_id) {
    Nifti1Header h = parse_nifti1_header(bytes);
    if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0)
        throw ParseError("nifti: two-file form (magic ni1) is unsupported");
    if (h.dim[0] != 3)
        throw ParseError("nifti: only 3-D volumes supported, dim[0] = " + std::to_string(h.dim[0]));
    const std::size_t nx = static_cast<std::size_t>(h.dim[1]);
    const std::size_t ny = static_cast<std::size_t>(h.dim[2]);
    const std::size_t nz = static_cast<std::size_t>(h.dim[3]);
    if (nx == 0 || ny == 0 || nz == 0) throw ParseError("nifti: zero extent in dim");
    std::size_t elem = 0;
    switch (h.datatype) {
        case 4: elem = 2; break;    // int16
        case 16: elem = 4; break;   // float32
        case 64: elem = 8; break;   // float64
        default:
            throw ParseError("nifti: unsupported datatype " + std::to_string(h.datatype));
    }
    const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
    if (offset < 348) throw ParseError("nifti: vox_offset inside the header");
    const std::size_t n = nx * ny * nz;
    if (bytes.size() < offset + n * elem) throw ParseError("nifti: truncated payload");

    const double slope = h.scl_slope != 0.0f ? static_cast<double>(h.scl_slope) : 1.0;
    const double inter = h.scl_slope != 0.0f ? static_cast<double>(h.scl_inter) : 0.0;

    Volume v;
    v.source_id = source_id;
    v.data = Tensor<double>({nx, ny, nz});
    for (int a = 0; a < 3; ++a) {
        double mm = static_cast<double>(h.pixdim[a + 1]);
        v.spacing[a] = mm > 0.0 ? mm : 1.0;
    }
    auto& out = v.data.mutable_data();

    // after the optional swap the element bytes are little-endian
    auto read_elem = [&](std::size_t i) -> double {
        unsigned char buf[8];
        std::memcpy(buf, bytes.data() + offset + i * elem, elem);
        if (h.was_swapped) swap_bytes(buf, elem);
        switch (h.datatype) {
            case 4: return static_cast<double>(load_le<std::int16_t>(buf));
            case 16: return static_cast<double>(load_le<float>(buf));
            default: return load_le<double>(buf);
        }
    };

    // NIfTI stores x fastest; our tensor is row-major [X,Y,Z] (z fastest)
    for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t x = 0; x < nx; ++x) {
                double val = slope * read_elem(x + nx * (y + ny * z)) + inter;
                out[(x * ny + y) * nz + z] = val;
            }
    if (!v.data.all_finite()) throw ParseError("nifti: non-finite intensities in payload");
    return v;
}

Volume read_nifti(const std::string& path) {
    return parse_nifti1(read_file_bytes(path), fs::path(path).stem().string());
}

void write_nifti(const std::string& path, const Volume& v) {
    if (v.data.rank() != 3) throw ContractError("write_nifti: volume data must be rank 3");
    Nifti1Header h;
    h.raw.fill(0);
    h.sizeof_hdr = 348;
    h.dim = {3, static_cast<std::int16_t>(v.data.extent(0)), static_cast<std::int16_t>(v.data.extent(1)),
             static_cast<std::int16_t>(v.data.extent(2)), 1, 1, 1, 1};
    h.datatype = 16;  // float32
    h.bitpix = 32;
    h.pixdim = {1.0f, static_cast<float>(v.spacing[0]), static_cast<float>(v.spacing[1]),
                static_cast<float>(v.spacing[2]), 0, 0, 0, 0};
    h.vox_offset = 352.0f;
    h.scl_slope = 0.0f;
    h.scl_inter = 0.0f;
    h.magic = {'n', '+', '1', '\0'};
    std::array<unsigned char, 348> hdr = serialize_nifti1_header(h);

    const std::size_t nx = v.data.extent(0), ny = v.data.extent(1), nz = v.data.extent(2);
    std::vector<unsigned char> bytes(352 + nx * ny * nz * 4, 0);
    std::memcpy(bytes.data(), hdr.data(), 348);
    const auto& d = v.data.data();
    std::size_t i = 0;
    for (std::size_t z = 0; z < nz; ++z)
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t x = 0; x < nx; ++x, ++i)
                store_le<float>(bytes.data() + 352 + i * 4,
                                static_cast<float>(d[(x * ny + y) * nz + z]));
    write_file_bytes(path, bytes);
}

// ---------------------------------------------------------------------------
// ".rt" raw tensors

namespace {

template <class T>
std::vector<unsigned char> encode_rt(const Tensor<T>& t, RtDtype dtype) {
    if (t.rank() == 0) throw ContractError("rt: rank-0 tensors are not representable");
    std::vector<unsigned char> out;
    out.reserve(6 + 4 * t.rank() + t.size() * sizeof(T));
    out.insert(out.end(), {'R', 'T', '0', '1'});
    out.push_back(static_cast<unsigned char>(dtype));
    out.push_back(static_cast<unsigned char>(t.rank()));
    for (std::size_t e : t.shape()) {
        unsigned char b[4];
        store_le<std::uint32_t>(b, static_cast<std::uint32_t>(e));
        out.insert(out.end(), b, b + 4);
    }
    std::size_t pos = out.size();
    out.resize(pos + t.size() * sizeof(T));
    for (T v : t.data()) {
        store_le<T>(out.data() + pos, v);
        pos += sizeof(T);
    }
    return out;
}

}  // namespace

std::vector<unsigned char> encode_rt_f32(const Tensor<float>& t) { return encode_rt(t, RtDtype::F32); }
std::vector<unsigned char> encode_rt_f64(const Tensor<double>& t) { return encode_rt(t, RtDtype::F64); }

void write_rt_f32(const std::string& path, const Tensor<float>& t) {
    write_file_bytes(path, encode_rt_f32(t));
}

void write_rt_f64(const std::string& path, const Tensor<double>& t) {
    write_file_bytes(path, encode_rt_f64(t));
}

Tensor<double> RtTensor::as_f64() const {
    if (dtype == RtDtype::F64) return f64;
    std::vector<double> v(f32.data().begin(), f32.data().end());
    return Tensor<double>(f32.shape(), std::move(v));
}

Tensor<float> RtTensor::as_f32() const {
    if (dtype == RtDtype::F32) return f32;
    std::vector<float> v(f64.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(f64.data()[i]);
    return Tensor<float>(f64.shape(), std::move(v));
}

RtTensor decode_rt(const unsigned char* bytes, std::size_t len) {
    if (len < 6) throw ParseError("rt: truncated header");
    if (std::memcmp(bytes, "RT01", 4) != 0) throw ParseError("rt: bad magic");
    const unsigned dtype = bytes[4];
    if (dtype != 1 && dtype != 2) throw ParseError("rt: unknown dtype code " + std::to_string(dtype));
    const unsigned rank = bytes[5];
    if (rank == 0) throw ParseError("rt: rank 0 rejected");
    if (len < 6 + 4 * static_cast<std::size_t>(rank)) throw ParseError("rt: truncated extents");
    Shape shape(rank);
    std::size_t n = 1;
    for (unsigned i = 0; i < rank; ++i) {
        shape[i] = load_le<std::uint32_t>(bytes + 6 + 4 * i);
        if (shape[i] == 0) throw ParseError("rt: zero extent");
        n *= shape[i];
    }
    const std::size_t elem = dtype == 1 ? 4 : 8;
    const std::size_t payload_at = 6 + 4 * static_cast<std::size_t>(rank);
    if (len < payload_at + n * elem) throw ParseError("rt: truncated payload");
    RtTensor out;
    out.dtype = static_cast<RtDtype>(dtype);
    if (dtype == 1) {
        std::vector<float> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = load_le<float>(bytes + payload_at + i * 4);
        out.f32 = Tensor<float>(std::move(shape), std::move(v));
    } else {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = load_le<double>(bytes + payload_at + i * 8);
        out.f64 = Tensor<double>(std::move(shape), std::move(v));
    }
    return out;
}

RtTensor read_rt(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    return decode_rt(bytes.data(), bytes.size());
}

Tensor<double> read_rt_f64(const std::string& path) { return read_rt(path).as_f64(); }

// ---------------------------------------------------------------------------
// PGM

PgmImage read_pgm(const std::string& path) {
    std::vector<unsigned char> bytes = read_file_bytes(path);
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (std::isspace(bytes[pos])) {
                ++pos;
            } else if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) tok += static_cast<char>(bytes[pos++]);
        return tok;
    };
    if (next_token() != "P5") throw ParseError("pgm: only binary P5 supported");
    std::size_t w = 0, h = 0;
    unsigned maxval = 0;
    try {
        w = std::stoul(next_token());
        h = std::stoul(next_token());
        maxval = static_cast<unsigned>(std::stoul(next_token()));
    } catch (const std::exception&) {
        throw ParseError("pgm: malformed header");
    }
    if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw ParseError("pgm: bad geometry");
    ++pos;  // single whitespace after maxval
    const std::size_t elem = maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + w * h * elem) throw ParseError("pgm: truncated payload");
    PgmImage img;
    img.max_val = maxval;
    img.pixels = Tensor<double>({h, w});
    auto& d = img.pixels.mutable_data();
    for (std::size_t i = 0; i < w * h; ++i) {
        if (elem == 1) {
            d[i] = static_cast<double>(bytes[pos + i]);
        } else {
            // 16-bit samples are big-endian
            d[i] = static_cast<double>((static_cast<unsigned>(bytes[pos + 2 * i]) << 8) |
                                       bytes[pos + 2 * i + 1]);
        }
    }
    return img;
}

void write_pgm(const std::string& path, const Tensor<double>& img, unsigned max_val) {
    if (img.rank() != 2) throw ContractError("write_pgm: rank-2 image required");
    if (max_val == 0 || max_val > 65535) throw ContractError("write_pgm: max_val out of range");
    std::ostringstream head;
    head << "P5\n" << img.extent(1) << ' ' << img.extent(0) << '\n' << max_val << '\n';
    std::string hs = head.str();
    std::vector<unsigned char> out(hs.begin(), hs.end());
    const std::size_t elem = max_val > 255 ? 2 : 1;
    for (double v : img.data()) {
        long s = std::lround(std::min(static_cast<double>(max_val), std::max(0.0, v)));
        if (elem == 1) {
            out.push_back(static_cast<unsigned char>(s));
        } else {
            out.push_back(static_cast<unsigned char>((s >> 8) & 0xff));
            out.push_back(static_cast<unsigned char>(s & 0xff));
        }
    }
    write_file_bytes(path, out);
}

// ---------------------------------------------------------------------------
// volume preparation

Volume normalize_volume(const Volume& v) {
    Volume out;
    out.spacing = v.spacing;
    out.source_id = v.source_id;
    const auto& d = v.data.data();
    double lo = d[0], hi = d[0];
    for (double x : d) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    std::vector<double> nd(d.size());
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        for (std::size_t i = 0; i < d.size(); ++i) nd[i] = (d[i] - lo) * inv;
    }  // constant volume stays all zeros
    out.data = Tensor<double>(v.data.shape(), std::move(nd));
    return out;
}

std::vector<Tensor<double>> extract_sagittal_slices(const Volume& v, double blank_threshold,
                                                    std::size_t slice_axis) {
    if (v.data.rank() != 3) throw ContractError("extract_sagittal_slices: volume must be rank 3");
    if (slice_axis > 2) throw ConfigError("extract_sagittal_slices: slice_axis must be 0, 1 or 2");
    const std::size_t nx = v.data.extent(0), ny = v.data.extent(1), nz = v.data.extent(2);
    const auto& d = v.data.data();
    std::vector<Tensor<double>> out;
    const std::size_t n_slices = v.data.extent(slice_axis);
    for (std::size_t s = 0; s < n_slices; ++s) {
        std::size_t h, w;
        if (slice_axis == 0) {
            h = ny;
            w = nz;
        } else if (slice_axis == 1) {
            h = nx;
            w = nz;
        } else {
            h = nx;
            w = ny;
        }
        Tensor<double> img({h, w});
        auto& id = img.mutable_data();
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                std::size_t x, y, z;
                if (slice_axis == 0) {
                    x = s; y = i; z = j;
                } else if (slice_axis == 1) {
                    x = i; y = s; z = j;
                } else {
                    x = i; y = j; z = s;
                }
                id[i * w + j] = d[(x * ny + y) * nz + z];
            }
        double mn = id[0], mx = id[0];
        for (double x : id) {
            mn = std::min(mn, x);
            mx = std::max(mx, x);
        }
        // zero variance == constant slice, tested exactly
        const bool blank = mx < blank_threshold || mn == mx;
        if (!blank) out.push_back(std::move(img));
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset assembly

SliceDataset build_dataset(const std::vector<Volume>& volumes, int folds, std::size_t factor,
                           double blank_threshold) {
    if (folds < 1) throw ConfigError("build_dataset: folds must be >= 1");
    if (static_cast<std::size_t>(folds) > volumes.size())
        throw ConfigError("build_dataset: more folds (" + std::to_string(folds) +
                          ") than volumes (" + std::to_string(volumes.size()) + ")");
    SliceDataset ds;
    ds.folds = folds;
    for (std::size_t vi = 0; vi < volumes.size(); ++vi) {
        const int fold = static_cast<int>(vi % static_cast<std::size_t>(folds));
        std::vector<Tensor<double>> slices = extract_sagittal_slices(volumes[vi], blank_threshold);
        for (std::size_t si = 0; si < slices.size(); ++si) {
            SlicePair p;
            std::ostringstream id;
            id << volumes[vi].source_id << "_s" << si;
            p.id = id.str();
            p.fold = fold;
            p.hr = std::move(slices[si]);
            p.lr = degrade(p.hr, factor);
            ds.pairs.push_back(std::move(p));
        }
    }
    return ds;
}

void write_manifest(const std::string& path, const std::vector<std::array<std::string, 4>>& rows) {
    std::ostringstream os;
    for (const auto& r : rows) os << r[0] << '\t' << r[1] << '\t' << r[2] << '\t' << r[3] << '\n';
    write_file_text(path, os.str());
}

std::vector<std::array<std::string, 4>> read_manifest(const std::string& path) {
    std::istringstream is(read_file_text(path));
    std::vector<std::array<std::string, 4>> rows;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::array<std::string, 4> r;
        std::size_t start = 0;
        for (int f = 0; f < 4; ++f) {
            std::size_t tab = line.find('\t', start);
            if (f < 3 && tab == std::string::npos)
                throw ParseError("manifest: expected 4 tab-separated fields: '" + line + "'");
            r[f] = line.substr(start, tab == std::string::npos ? std::string::npos : tab - start);
            start = tab + 1;
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

SliceDataset load_dataset(const std::string& manifest_path) {
    const fs::path base = fs::path(manifest_path).parent_path();
    SliceDataset ds;
    int max_fold = 0;
    for (const auto& row : read_manifest(manifest_path)) {
        SlicePair p;
        p.id = row[0];
        try {
            p.fold = std::stoi(row[1]);
        } catch (const std::exception&) {
            throw ParseError("manifest: bad fold field '" + row[1] + "'");
        }
        p.lr = read_rt_f64((base / row[2]).string());
        p.hr = read_rt_f64((base / row[3]).string());
        if (p.lr.rank() != 2 || p.hr.rank() != 2 || p.lr.extent(0) != p.hr.extent(0) ||
            p.lr.extent(1) * 4 != p.hr.extent(1))
            throw ContractError("dataset: pair '" + p.id +
                                "' does not satisfy the LR = HR / 4 slice-axis contract");
        max_fold = std::max(max_fold, p.fold);
        ds.pairs.push_back(std::move(p));
    }
    ds.folds = max_fold + 1;
    return ds;
}

// ---------------------------------------------------------------------------
// file helpers

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    std::streamsize n = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw ParseError("failed to read file: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ParseError("failed to write file: " + path);
}

std::string read_file_text(const std::string& path) {
    std::vector<unsigned char> b = read_file_bytes(path);
    return std::string(b.begin(), b.end());
}

void write_file_text(const std::string& path, const std::string& text) {
    write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

}  // namespace mlpsr
