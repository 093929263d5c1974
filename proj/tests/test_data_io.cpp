#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>

#include "mlpsr/data_io.hpp"
#include "test_util.hpp"

using namespace mlpsr;

namespace {

// Builds an uncompressed single-file fixture from scratch. All multi-byte
// fields little-endian unless `big_endian` is set.
std::vector<unsigned char> make_nifti_fixture(std::size_t nx, std::size_t ny, std::size_t nz,
                                              const std::vector<float>& payload_xyz,
                                              bool big_endian, float slope = 0.0f,
                                              float inter = 0.0f) {
    std::vector<unsigned char> out(352 + payload_xyz.size() * 4, 0);
    auto put16 = [&](std::size_t off, std::int16_t v) {
        unsigned char b[2];
        std::memcpy(b, &v, 2);
        if (big_endian) std::swap(b[0], b[1]);
        std::memcpy(out.data() + off, b, 2);
    };
    auto put32i = [&](std::size_t off, std::int32_t v) {
        unsigned char b[4];
        std::memcpy(b, &v, 4);
        if (big_endian) std::reverse(b, b + 4);
        std::memcpy(out.data() + off, b, 4);
    };
    auto put32f = [&](std::size_t off, float v) {
        unsigned char b[4];
        std::memcpy(b, &v, 4);
        if (big_endian) std::reverse(b, b + 4);
        std::memcpy(out.data() + off, b, 4);
    };
    put32i(0, 348);
    put16(40, 3);  // dim[0]
    put16(42, static_cast<std::int16_t>(nx));
    put16(44, static_cast<std::int16_t>(ny));
    put16(46, static_cast<std::int16_t>(nz));
    for (std::size_t i = 4; i < 8; ++i) put16(40 + 2 * i, 1);
    put16(70, 16);  // float32
    put16(72, 32);
    put32f(76, 1.0f);
    put32f(80, 0.9766f);
    put32f(84, 0.9766f);
    put32f(88, 4.0f);
    put32f(108, 352.0f);  // vox_offset
    put32f(112, slope);
    put32f(116, inter);
    std::memcpy(out.data() + 344, "n+1\0", 4);
    for (std::size_t i = 0; i < payload_xyz.size(); ++i) put32f(352 + 4 * i, payload_xyz[i]);
    return out;
}

std::filesystem::path temp_dir() {
    auto p = std::filesystem::temp_directory_path() / "mlpsr_data_io_test";
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("nifti: native and byte-swapped fixtures parse to identical volumes") {
    std::vector<float> payload(4 * 3 * 2);
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<float>(i) * 0.25f;
    auto le = make_nifti_fixture(4, 3, 2, payload, false);
    auto be = make_nifti_fixture(4, 3, 2, payload, true);

    Volume vle = parse_nifti1(le, "fix");
    Volume vbe = parse_nifti1(be, "fix");
    CHECK(vle.data.shape() == Shape{4, 3, 2});
    CHECK(vle.data.data() == vbe.data.data());
    CHECK(vle.spacing[0] == doctest::Approx(0.9766));
    CHECK(vle.spacing[2] == doctest::Approx(4.0));

    // x-fastest payload lands at [x][y][z]
    // payload index x + nx*(y + ny*z); value = idx * 0.25
    CHECK(vle.data.at({1, 2, 0}) == doctest::Approx((1 + 4 * 2) * 0.25));
    CHECK(vle.data.at({0, 0, 1}) == doctest::Approx((0 + 4 * 3) * 0.25));
}

TEST_CASE("nifti: header re-serialization reproduces the original 348 bytes") {
    std::vector<float> payload(8, 1.0f);
    auto le = make_nifti_fixture(2, 2, 2, payload, false);
    Nifti1Header h = parse_nifti1_header(le);
    auto round = serialize_nifti1_header(h);
    CHECK(std::memcmp(round.data(), le.data(), 348) == 0);

    // a swapped source normalizes to the little-endian encoding
    auto be = make_nifti_fixture(2, 2, 2, payload, true);
    Nifti1Header hb = parse_nifti1_header(be);
    CHECK(hb.was_swapped);
    auto round_b = serialize_nifti1_header(hb);
    CHECK(std::memcmp(round_b.data(), le.data(), 348) == 0);
}

TEST_CASE("nifti: scl_slope/scl_inter applied when slope is nonzero") {
    std::vector<float> payload(8, 2.0f);
    auto bytes = make_nifti_fixture(2, 2, 2, payload, false, 3.0f, 1.5f);
    Volume v = parse_nifti1(bytes, "scaled");
    for (double x : v.data.data()) CHECK(x == doctest::Approx(7.5));
}

TEST_CASE("nifti: parse errors are specific") {
    std::vector<float> payload(8, 1.0f);
    auto good = make_nifti_fixture(2, 2, 2, payload, false);

    auto bad_magic = good;
    std::memcpy(bad_magic.data() + 344, "xxx\0", 4);
    CHECK_THROWS_WITH_AS(parse_nifti1(bad_magic, "f"), doctest::Contains("bad magic"), ParseError);

    auto bad_dtype = good;
    bad_dtype[70] = 8;  // int32, unsupported
    CHECK_THROWS_WITH_AS(parse_nifti1(bad_dtype, "f"), doctest::Contains("unsupported datatype"),
                         ParseError);

    auto truncated = good;
    truncated.resize(352 + 3);
    CHECK_THROWS_WITH_AS(parse_nifti1(truncated, "f"), doctest::Contains("truncated payload"),
                         ParseError);

    std::vector<unsigned char> tiny(100, 0);
    CHECK_THROWS_WITH_AS(parse_nifti1(tiny, "f"), doctest::Contains("truncated header"), ParseError);

    auto bad_size = good;
    bad_size[0] = 0x11;
    bad_size[1] = 0x22;
    bad_size[2] = 0x33;
    bad_size[3] = 0x44;
    CHECK_THROWS_AS(parse_nifti1(bad_size, "f"), ParseError);
}

TEST_CASE("nifti: write then read round-trips data and spacing") {
    auto dir = temp_dir();
    Volume v;
    v.source_id = "vol";
    v.spacing = {1.0, 1.0, 4.0};
    v.data = Tensor<double>({3, 4, 5});
    for (std::size_t i = 0; i < v.data.size(); ++i)
        v.data.mutable_data()[i] = static_cast<double>(i) / 64.0;
    auto path = (dir / "roundtrip.nii").string();
    write_nifti(path, v);
    Volume back = read_nifti(path);
    CHECK(back.data.shape() == v.data.shape());
    for (std::size_t i = 0; i < v.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(v.data[i]).epsilon(1e-7));
    CHECK(back.spacing[2] == doctest::Approx(4.0));
}

TEST_CASE("rt: bit-exact round trip for both dtypes") {
    auto dir = temp_dir();
    Rng rng(1);
    Tensor<double> t64 = testutil::random_tensor({3, 5, 2}, rng);
    auto p64 = (dir / "t64.rt").string();
    write_rt_f64(p64, t64);
    RtTensor back = read_rt(p64);
    REQUIRE(back.dtype == RtDtype::F64);
    CHECK(back.f64.shape() == t64.shape());
    CHECK(std::memcmp(back.f64.data().data(), t64.data().data(), t64.size() * 8) == 0);

    Tensor<float> t32({4, 4});
    for (std::size_t i = 0; i < 16; ++i) t32.mutable_data()[i] = static_cast<float>(i) * 0.1f;
    auto p32 = (dir / "t32.rt").string();
    write_rt_f32(p32, t32);
    RtTensor b32 = read_rt(p32);
    REQUIRE(b32.dtype == RtDtype::F32);
    CHECK(std::memcmp(b32.f32.data().data(), t32.data().data(), 16 * 4) == 0);

    // byte layout: magic, dtype, rank, extents
    auto bytes = read_file_bytes(p32);
    CHECK(bytes[0] == 'R');
    CHECK(bytes[1] == 'T');
    CHECK(bytes[2] == '0');
    CHECK(bytes[3] == '1');
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 2);
    CHECK(bytes[6] == 4);  // extent 4, little-endian u32
    CHECK(bytes[7] == 0);
    CHECK(bytes.size() == 6 + 8 + 16 * 4);
}

TEST_CASE("rt: malformed inputs") {
    auto dir = temp_dir();
    Tensor<double> t({2, 2}, {1, 2, 3, 4});
    auto path = (dir / "bad.rt").string();
    write_rt_f64(path, t);
    auto bytes = read_file_bytes(path);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_rt(bad_magic.data(), bad_magic.size()),
                         doctest::Contains("bad magic"), ParseError);

    auto rank0 = bytes;
    rank0[5] = 0;
    CHECK_THROWS_WITH_AS(decode_rt(rank0.data(), rank0.size()), doctest::Contains("rank 0"),
                         ParseError);

    CHECK_THROWS_WITH_AS(decode_rt(bytes.data(), bytes.size() - 5), doctest::Contains("truncated"),
                         ParseError);

    auto bad_dtype = bytes;
    bad_dtype[4] = 9;
    CHECK_THROWS_AS(decode_rt(bad_dtype.data(), bad_dtype.size()), ParseError);
}

TEST_CASE("pgm round trip, 8- and 16-bit") {
    auto dir = temp_dir();
    Tensor<double> img({3, 4});
    for (std::size_t i = 0; i < 12; ++i) img.mutable_data()[i] = static_cast<double>(i * 20);
    auto p8 = (dir / "img8.pgm").string();
    write_pgm(p8, img, 255);
    PgmImage back8 = read_pgm(p8);
    CHECK(back8.max_val == 255);
    CHECK(back8.pixels.data() == img.data());

    auto p16 = (dir / "img16.pgm").string();
    write_pgm(p16, img, 65535);
    PgmImage back16 = read_pgm(p16);
    CHECK(back16.max_val == 65535);
    CHECK(back16.pixels.data() == img.data());
}

TEST_CASE("normalize_volume") {
    Volume v;
    v.data = Tensor<double>({1, 2, 2}, {0.0, 250.0, 500.0, 1000.0});
    Volume n = normalize_volume(v);
    CHECK(n.data[0] == 0.0);
    CHECK(n.data[1] == 0.25);
    CHECK(n.data[3] == 1.0);

    Volume c;
    c.data = Tensor<double>({1, 1, 3}, {5.0, 5.0, 5.0});
    Volume cn = normalize_volume(c);
    for (double x : cn.data.data()) CHECK(x == 0.0);

    Volume signed_v;
    signed_v.data = Tensor<double>({1, 1, 3}, {-5.0, 0.0, 5.0});
    CHECK(normalize_volume(signed_v).data[1] == 0.5);
}

TEST_CASE("extract_sagittal_slices with blank filtering") {
    Volume zero;
    zero.data = Tensor<double>({4, 3, 3});
    CHECK(extract_sagittal_slices(zero).empty());

    Volume v;
    v.data = Tensor<double>({4, 3, 3});
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 3; ++k)
            v.data.mutable_data()[(2 * 3 + j) * 3 + k] = 0.5 + 0.1 * static_cast<double>(j);
    auto slices = extract_sagittal_slices(v);
    REQUIRE(slices.size() == 1);
    CHECK(slices[0].shape() == Shape{3, 3});
    CHECK(slices[0].at({1, 0}) == doctest::Approx(0.6));

    // a bright but perfectly constant slice is still blank (zero variance)
    Volume flat;
    flat.data = Tensor<double>({2, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) flat.data.mutable_data()[i] = 0.9;
    CHECK(extract_sagittal_slices(flat).empty());
}

TEST_CASE("build_dataset: folds partition volumes, LR extents follow the contract") {
    std::vector<Volume> volumes;
    Rng rng(2);
    for (int i = 0; i < 5; ++i) {
        Volume v;
        v.source_id = "vol" + std::to_string(i);
        v.data = Tensor<double>({2, 8, 8});
        for (auto& x : v.data.mutable_data()) x = rng.uniform(0.1, 1.0);
        volumes.push_back(std::move(v));
    }
    SliceDataset ds = build_dataset(volumes, 5);
    CHECK(ds.folds == 5);
    CHECK(ds.pairs.size() == 10);
    for (const auto& p : ds.pairs) {
        CHECK(p.hr.shape() == Shape{8, 8});
        CHECK(p.lr.shape() == Shape{8, 2});
        CHECK(p.fold >= 0);
        CHECK(p.fold < 5);
    }
    // volume-level assignment: both slices of a volume share its fold
    for (int vi = 0; vi < 5; ++vi) {
        int fold = -1;
        for (const auto& p : ds.pairs)
            if (p.id.rfind("vol" + std::to_string(vi) + "_", 0) == 0) {
                if (fold < 0) fold = p.fold;
                CHECK(p.fold == fold);
            }
    }
    CHECK_THROWS_AS(build_dataset(volumes, 6), ConfigError);

    // volume-level assignment at scale: 80 volumes over 5 folds -> 16 each
    std::vector<Volume> many;
    for (int i = 0; i < 80; ++i) {
        Volume v;
        v.source_id = "m" + std::to_string(i);
        v.data = Tensor<double>({1, 8, 8});
        for (std::size_t j = 0; j < 64; ++j)
            v.data.mutable_data()[j] = 0.1 + 0.01 * static_cast<double>((i + j) % 7);
        many.push_back(std::move(v));
    }
    SliceDataset big = build_dataset(many, 5);
    std::array<int, 5> per_fold{};
    for (const auto& p : big.pairs) per_fold[static_cast<std::size_t>(p.fold)] += 1;
    for (int count : per_fold) CHECK(count == 16);

    // deterministic: rebuilding yields bit-identical pairs
    SliceDataset ds2 = build_dataset(volumes, 5);
    REQUIRE(ds2.pairs.size() == ds.pairs.size());
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        CHECK(ds.pairs[i].id == ds2.pairs[i].id);
        CHECK(ds.pairs[i].lr.data() == ds2.pairs[i].lr.data());
        CHECK(ds.pairs[i].hr.data() == ds2.pairs[i].hr.data());
    }
}

TEST_CASE("manifest round trip and dataset loading") {
    auto dir = temp_dir() / "manifest";
    std::filesystem::create_directories(dir);
    Rng rng(3);
    std::vector<std::array<std::string, 4>> rows;
    for (int i = 0; i < 3; ++i) {
        Tensor<double> hr = testutil::random_uniform_tensor({8, 8}, rng, 0, 1);
        Tensor<double> lr = testutil::random_uniform_tensor({8, 2}, rng, 0, 1);
        std::string hr_name = "s" + std::to_string(i) + ".hr.rt";
        std::string lr_name = "s" + std::to_string(i) + ".lr.rt";
        write_rt_f64((dir / hr_name).string(), hr);
        write_rt_f64((dir / lr_name).string(), lr);
        rows.push_back({"img" + std::to_string(i), std::to_string(i % 2), lr_name, hr_name});
    }
    auto manifest = (dir / "manifest.tsv").string();
    write_manifest(manifest, rows);
    auto parsed = read_manifest(manifest);
    REQUIRE(parsed.size() == 3);
    CHECK(parsed[1][0] == "img1");
    CHECK(parsed[1][1] == "1");

    SliceDataset ds = load_dataset(manifest);
    CHECK(ds.pairs.size() == 3);
    CHECK(ds.folds == 2);
    CHECK(ds.pairs[2].hr.shape() == Shape{8, 8});
}
