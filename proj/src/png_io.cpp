#include "cxrgen/png_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>

#include "cxrgen/errors.hpp"

namespace cxrgen::png_io {

namespace {

struct ByteSink {
  std::vector<uint8_t> bytes;
};

void sink_write(png_structp png, png_bytep data, png_size_t len) {
  auto* sink = static_cast<ByteSink*>(png_get_io_ptr(png));
  sink->bytes.insert(sink->bytes.end(), data, data + len);
}

void sink_flush(png_structp) {}

struct ByteSource {
  const uint8_t* data;
  size_t len;
  size_t pos = 0;
};

void source_read(png_structp png, png_bytep out, png_size_t len) {
  auto* src = static_cast<ByteSource*>(png_get_io_ptr(png));
  if (src->pos + len > src->len) {
    png_error(png, "read past end of buffer");
  }
  std::memcpy(out, src->data + src->pos, len);
  src->pos += len;
}

}  // namespace

std::vector<uint8_t> encode_gray(const Gray& img) {
  if (img.width <= 0 || img.height <= 0) {
    throw CodecError("png encode: empty image");
  }
  if (img.bit_depth != 8 && img.bit_depth != 16) {
    throw CodecError("png encode: unsupported bit depth");
  }
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  ByteSink sink;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw CodecError("png encode failed");
  }
  png_set_write_fn(png, &sink, sink_write, sink_flush);
  png_set_IHDR(png, info, img.width, img.height, img.bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed settings so identical pixels always give identical bytes.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_write_info(png, info);

  const size_t w = static_cast<size_t>(img.width);
  std::vector<png_byte> row(img.bit_depth == 16 ? w * 2 : w);
  for (int y = 0; y < img.height; ++y) {
    const uint16_t* src = img.pixels.data() + static_cast<size_t>(y) * w;
    if (img.bit_depth == 16) {
      for (size_t x = 0; x < w; ++x) {
        row[2 * x] = static_cast<png_byte>(src[x] >> 8);
        row[2 * x + 1] = static_cast<png_byte>(src[x] & 0xff);
      }
    } else {
      for (size_t x = 0; x < w; ++x) row[x] = static_cast<png_byte>(src[x] & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return std::move(sink.bytes);
}

Gray decode_gray(const uint8_t* bytes, size_t len) {
  if (len < 8 || png_sig_cmp(bytes, 0, 8) != 0) {
    throw CodecError("png decode: not a PNG stream");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  ByteSource src{bytes, len};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw CodecError("png decode failed");
  }
  png_set_read_fn(png, &src, source_read);
  png_read_info(png, info);

  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0;
  png_get_IHDR(png, info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE) png_set_rgb_to_gray(png, 1, -1, -1);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  depth = png_get_bit_depth(png, info);

  Gray out;
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.bit_depth = depth;
  out.pixels.resize(static_cast<size_t>(w) * h);

  std::vector<png_byte> row(depth == 16 ? w * 2 : w);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    uint16_t* dst = out.pixels.data() + static_cast<size_t>(y) * w;
    if (depth == 16) {
      for (png_uint_32 x = 0; x < w; ++x) {
        dst[x] = static_cast<uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
      }
    } else {
      for (png_uint_32 x = 0; x < w; ++x) dst[x] = row[x];
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_gray(const std::filesystem::path& file, const Gray& img) {
  auto bytes = encode_gray(img);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IngestionError("cannot open for writing: " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IngestionError("write failed: " + file.string());
}

Gray read_gray(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IngestionError("cannot open: " + file.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_gray(bytes.data(), bytes.size());
}

}  // namespace cxrgen::png_io
