#include "dta/pgm.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dta {

namespace {

// Next whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) continue;
    tok.push_back(static_cast<char>(c));
    while ((c = in.peek()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(in.get()));
    return tok;
  }
  return tok;
}

int64_t parse_dim(const std::string& tok, const std::string& path) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
    throw std::runtime_error("pgm: malformed header in " + path);
  return std::stoll(tok);
}

}  // namespace

ImageU8 read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("pgm: cannot open " + path);
  if (next_token(in) != "P5") throw std::runtime_error("pgm: not a binary P5 file: " + path);
  ImageU8 img;
  img.w = parse_dim(next_token(in), path);
  img.h = parse_dim(next_token(in), path);
  int64_t maxval = parse_dim(next_token(in), path);
  if (img.w <= 0 || img.h <= 0 || maxval != 255)
    throw std::runtime_error("pgm: unsupported header in " + path);
  // single whitespace byte separates header and payload; already consumed by
  // tokenizer? No: tokenizer stops before the separator, so consume one here.
  in.get();
  img.pix.resize(static_cast<size_t>(img.size()));
  in.read(reinterpret_cast<char*>(img.pix.data()), static_cast<std::streamsize>(img.pix.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pix.size()))
    throw std::runtime_error("pgm: truncated payload in " + path);
  return img;
}

void write_pgm(const std::string& path, const ImageU8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("pgm: cannot write " + path);
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
  if (!out) throw std::runtime_error("pgm: write failed for " + path);
}

void write_ppm(const std::string& path, int64_t w, int64_t h,
               const std::vector<uint8_t>& rgb) {
  if (static_cast<int64_t>(rgb.size()) != w * h * 3)
    throw std::invalid_argument("ppm: rgb buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ppm: cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw std::runtime_error("ppm: write failed for " + path);
}

std::vector<float> to_unit_floats(const ImageU8& img) {
  std::vector<float> out(img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i)
    out[i] = static_cast<float>(img.pix[i]) / 255.0f;
  return out;
}

ImageU8 from_unit_floats(int64_t w, int64_t h, const std::vector<float>& vals) {
  if (static_cast<int64_t>(vals.size()) != w * h)
    throw std::invalid_argument("pgm: float buffer size mismatch");
  ImageU8 img;
  img.w = w;
  img.h = h;
  img.pix.resize(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) {
    float v = std::round(vals[i] * 255.0f);
    img.pix[i] = static_cast<uint8_t>(std::min(255.0f, std::max(0.0f, v)));
  }
  return img;
}

}  // namespace dta
