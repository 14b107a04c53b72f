#include "tgaf/image_io.hpp"

#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <sstream>

#include <jpeglib.h>
#include <png.h>

#include "tgaf/errors.hpp"

namespace tgaf::io {

namespace {

unsigned char to_byte(float v) {
    const float scaled = v * 255.0f;
    const float r = std::round(scaled);
    return static_cast<unsigned char>(std::min(255.0f, std::max(0.0f, r)));
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void validate_image(const Tensor<float>& img, const std::string& what) {
    if (img.rank() != 3) throw DataError(what + ": expected CHW image");
    const std::size_t c = img.dim(0);
    if (c != 1 && c != 3) throw DataError(what + ": channel count must be 1 or 3");
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float v = img[i];
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw DataError(what + ": pixel values must be finite and in [0,1]");
        }
    }
}

bool is_image_file(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    return ext == ".ppm" || ext == ".jpg" || ext == ".jpeg" || ext == ".tns";
}

Tensor<float> load_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".ppm") return load_ppm(path);
    if (ext == ".jpg" || ext == ".jpeg") return load_jpeg(path);
    if (ext == ".tns") {
        Tensor<float> t = load_tensor(path);
        validate_image(t, "load_image(" + path.string() + ")");
        return t;
    }
    throw DataError("load_image: unsupported extension '" + ext + "' for " + path.string());
}

Tensor<float> load_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_ppm: no such file: " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P6") throw DataError("load_ppm: not a binary PPM: " + path.string());
    auto skip_ws_comments = [&] {
        while (is) {
            const int ch = is.peek();
            if (ch == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(ch)) {
                is.get();
            } else {
                break;
            }
        }
    };
    std::size_t w = 0, h = 0, maxval = 0;
    skip_ws_comments();
    is >> w;
    skip_ws_comments();
    is >> h;
    skip_ws_comments();
    is >> maxval;
    is.get();  // single whitespace before payload
    if (!is || w == 0 || h == 0 || maxval != 255) {
        throw DataError("load_ppm: unsupported header in " + path.string());
    }
    std::vector<unsigned char> raw(w * h * 3);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (is.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw DataError("load_ppm: truncated payload in " + path.string());
    }
    Tensor<float> img({3, h, w});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                img.at3(c, y, x) = static_cast<float>(raw[(y * w + x) * 3 + c]) / 255.0f;
            }
        }
    }
    return img;
}

void save_ppm(const Tensor<float>& img, const std::filesystem::path& path) {
    validate_image(img, "save_ppm");
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_ppm: cannot open for writing: " + path.string());
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(w * h * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ci = 0; ci < 3; ++ci) {
                const float v = img.at3(c == 1 ? 0 : ci, y, x);
                raw[(y * w + x) * 3 + ci] = to_byte(v);
            }
        }
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw DataError("save_ppm: write failed: " + path.string());
}

std::vector<unsigned char> encode_jpeg(const Tensor<float>& img, int quality) {
    validate_image(img, "encode_jpeg");
    if (quality < 1 || quality > 100) {
        throw std::invalid_argument("encode_jpeg: quality must be in [1,100]");
    }
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);

    jpeg_compress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    unsigned char* outbuf = nullptr;
    unsigned long outsize = 0;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        if (outbuf) free(outbuf);
        throw NumericalError(std::string("jpeg encode failed: ") + err.message);
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &outbuf, &outsize);

    cinfo.image_width = static_cast<JDIMENSION>(w);
    cinfo.image_height = static_cast<JDIMENSION>(h);
    cinfo.input_components = static_cast<int>(c);
    cinfo.in_color_space = (c == 1) ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);

    std::vector<unsigned char> row(w * c);
    while (cinfo.next_scanline < cinfo.image_height) {
        const std::size_t y = cinfo.next_scanline;
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ci = 0; ci < c; ++ci) row[x * c + ci] = to_byte(img.at3(ci, y, x));
        }
        JSAMPROW rp = row.data();
        jpeg_write_scanlines(&cinfo, &rp, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);

    std::vector<unsigned char> bytes(outbuf, outbuf + outsize);
    free(outbuf);
    return bytes;
}

Tensor<float> decode_jpeg(const std::vector<unsigned char>& bytes) {
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw NumericalError(std::string("jpeg decode failed: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    jpeg_start_decompress(&cinfo);

    const std::size_t w = cinfo.output_width, h = cinfo.output_height;
    const std::size_t c = static_cast<std::size_t>(cinfo.output_components);
    if (c != 1 && c != 3) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("decode_jpeg: unsupported component count");
    }
    Tensor<float> img({c, h, w});
    std::vector<unsigned char> row(w * c);
    while (cinfo.output_scanline < cinfo.output_height) {
        const std::size_t y = cinfo.output_scanline;
        JSAMPROW rp = row.data();
        jpeg_read_scanlines(&cinfo, &rp, 1);
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                img.at3(ci, y, x) = static_cast<float>(row[x * c + ci]) / 255.0f;
            }
        }
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

Tensor<float> load_jpeg(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_jpeg: no such file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    return decode_jpeg(bytes);
}

std::string jpeg_codec_id() {
    return "libjpeg-api-" + std::to_string(JPEG_LIB_VERSION);
}

void save_tensor(const Tensor<float>& t, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_tensor: cannot open for writing: " + path.string());
    os.write("TGAFTNS1", 8);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!os) throw DataError("save_tensor: write failed: " + path.string());
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_tensor: no such file: " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "TGAFTNS1") {
        throw DataError("load_tensor: bad magic in " + path.string());
    }
    const std::uint32_t rank = get_u32(is);
    if (rank == 0 || rank > 4) throw DataError("load_tensor: bad rank in " + path.string());
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(get_u32(is));
    if (!is) throw DataError("load_tensor: truncated header in " + path.string());
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float))) {
        throw DataError("load_tensor: truncated payload in " + path.string());
    }
    return t;
}

void save_png_rgb8(std::size_t width, std::size_t height, const std::vector<unsigned char>& rgb,
                   const std::filesystem::path& path) {
    if (rgb.size() != width * height * 3) {
        throw std::invalid_argument("save_png_rgb8: buffer size mismatch");
    }
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw DataError("save_png_rgb8: cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw DataError("save_png_rgb8: libpng failure for " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < height; ++y) {
        png_write_row(png, const_cast<png_bytep>(rgb.data() + y * width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

void save_png(const Tensor<float>& img, const std::filesystem::path& path) {
    validate_image(img, "save_png");
    const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::vector<unsigned char> rgb(w * h * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t ci = 0; ci < 3; ++ci) {
                rgb[(y * w + x) * 3 + ci] = to_byte(img.at3(c == 1 ? 0 : ci, y, x));
            }
        }
    }
    save_png_rgb8(w, h, rgb, path);
}

}  // namespace tgaf::io
