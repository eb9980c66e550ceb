#pragma once

// Guidance wire format (POST /v1/denoise), request and response alike:
//
//   8 bytes  "D4DGUID1"   (the final digit is the protocol version)
//   u32 LE   header length in bytes
//   header   UTF-8 JSON
//   payload  little-endian float32, row-major, frame-major
//
// Request header keys, in order: kind, prompt, cameras, t, guidance_scale,
// seed, shape [N, H, W, 3], dtype "f32le". Each camera is
// {azimuth, elevation, radius, fov}.
// Response header keys: provider_id, has_latent, rgb_shape and, when
// has_latent is true, latent_shape [N, h, w, C]. The payload is the denoised
// RGB followed (with latents) by denoised_latent then rendered_latent.
//
// GET /v1/health answers {"version": "1"}.

#include "d4d/camera.hpp"
#include "d4d/core.hpp"
#include "d4d/guidance.hpp"

#include "json.hpp"  // vendored nlohmann::json

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

namespace d4d::protocol {

inline constexpr std::string_view kMagicPrefix = "D4DGUID";
inline constexpr char kVersion = '1';
inline constexpr std::string_view kVersionString = "1";
inline constexpr std::size_t kPreamble = 12;
// Guard against absurd header lengths from corrupt streams.
inline constexpr std::uint32_t kMaxHeader = 1u << 24;

using Json = nlohmann::ordered_json;

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_floats(std::string& s, const std::vector<double>& v) {
  const std::size_t at = s.size();
  s.resize(at + 4 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const float f = static_cast<float>(v[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) s[at + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
}

inline std::vector<double> get_floats(std::string_view s, std::size_t offset, std::size_t n) {
  std::vector<double> out(n);
  const auto* p = reinterpret_cast<const unsigned char*>(s.data()) + offset;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = std::uint32_t(p[4 * i]) | std::uint32_t(p[4 * i + 1]) << 8 |
                               std::uint32_t(p[4 * i + 2]) << 16 | std::uint32_t(p[4 * i + 3]) << 24;
    float f;
    std::memcpy(&f, &bits, 4);
    out[i] = f;
  }
  return out;
}

inline std::string frame(const Json& header, std::size_t payload_floats) {
  const std::string h = header.dump();
  std::string s(kMagicPrefix);
  s.push_back(kVersion);
  put_u32(s, static_cast<std::uint32_t>(h.size()));
  s += h;
  s.reserve(s.size() + 4 * payload_floats);
  return s;
}

// Splits a framed message into (header JSON, payload offset).
inline std::pair<Json, std::size_t> unframe(std::string_view bytes) {
  if (bytes.size() < kPreamble) throw PayloadError("message shorter than the framing preamble");
  if (bytes.substr(0, kMagicPrefix.size()) != kMagicPrefix)
    throw PayloadError("message does not start with the D4DGUID magic");
  if (bytes[kMagicPrefix.size()] != kVersion)
    throw VersionError(std::string("protocol version '") + bytes[kMagicPrefix.size()] +
                       "' is not supported (expected '1')");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 8;
  const std::uint32_t len = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                            std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
  if (len > kMaxHeader || bytes.size() < kPreamble + len)
    throw PayloadError("message truncated inside the JSON header");
  Json header;
  try {
    header = Json::parse(bytes.substr(kPreamble, len));
  } catch (const nlohmann::json::exception& e) {
    throw PayloadError(std::string("malformed JSON header: ") + e.what());
  }
  if (!header.is_object()) throw PayloadError("JSON header is not an object");
  return {std::move(header), kPreamble + len};
}

template <typename T>
T field(const Json& h, const char* key) {
  if (!h.contains(key)) throw PayloadError(std::string("header lacks '") + key + "'");
  try {
    return h.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw PayloadError(std::string("header field '") + key + "' has the wrong type");
  }
}

inline std::size_t shape_numel(const std::vector<std::int64_t>& shape, const char* what) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 1 || d > (1 << 20)) throw PayloadError(std::string(what) + " has an invalid dimension");
    n *= std::size_t(d);
  }
  return n;
}

}  // namespace detail

inline Json request_header(const GuidanceRequest& req) {
  Json h;
  h["kind"] = std::string(kind_name(req.kind));
  h["prompt"] = req.prompt;
  Json cams = Json::array();
  for (const auto& c : req.cameras)
    cams.push_back({{"azimuth", c.azimuth}, {"elevation", c.elevation}, {"radius", c.radius},
                    {"fov", c.fov_y}});
  h["cameras"] = std::move(cams);
  h["t"] = req.t;
  h["guidance_scale"] = req.guidance_scale;
  h["seed"] = req.seed;
  h["shape"] = {req.n, req.height, req.width, 3};
  h["dtype"] = "f32le";
  return h;
}

inline std::string encode_request(const GuidanceRequest& req) {
  req.validate();
  std::string s = detail::frame(request_header(req), req.numel());
  detail::put_floats(s, req.images);
  return s;
}

// Timestamps are not part of the wire format and come back empty.
inline GuidanceRequest decode_request(std::string_view bytes) {
  auto [h, offset] = detail::unframe(bytes);
  GuidanceRequest req;
  try {
    req.kind = parse_kind(detail::field<std::string>(h, "kind"));
  } catch (const UsageError& e) {
    throw PayloadError(e.what());
  }
  req.prompt = detail::field<std::string>(h, "prompt");
  for (const auto& c : detail::field<Json>(h, "cameras")) {
    Camera cam;
    cam.azimuth = detail::field<double>(c, "azimuth");
    cam.elevation = detail::field<double>(c, "elevation");
    cam.radius = detail::field<double>(c, "radius");
    cam.fov_y = detail::field<double>(c, "fov");
    req.cameras.push_back(cam);
  }
  req.t = detail::field<double>(h, "t");
  req.guidance_scale = detail::field<double>(h, "guidance_scale");
  req.seed = detail::field<std::uint64_t>(h, "seed");
  if (detail::field<std::string>(h, "dtype") != "f32le") throw PayloadError("unsupported dtype");
  const auto shape = detail::field<std::vector<std::int64_t>>(h, "shape");
  if (shape.size() != 4 || shape[3] != 3) throw PayloadError("request shape must be [N, H, W, 3]");
  const std::size_t n = detail::shape_numel(shape, "request shape");
  if (bytes.size() - offset != 4 * n)
    throw PayloadError("request payload holds " + std::to_string(bytes.size() - offset) +
                       " bytes, expected " + std::to_string(4 * n));
  req.n = static_cast<int>(shape[0]);
  req.height = static_cast<int>(shape[1]);
  req.width = static_cast<int>(shape[2]);
  for (auto& c : req.cameras) {
    c.width = req.width;
    c.height = req.height;
  }
  req.images = detail::get_floats(bytes, offset, n);
  return req;
}

inline std::string encode_response(const GuidanceResponse& resp, int n, int h, int w) {
  Json header;
  header["provider_id"] = resp.provider_id;
  header["has_latent"] = resp.has_latent;
  header["rgb_shape"] = {n, h, w, 3};
  if (resp.has_latent) header["latent_shape"] = resp.latent_shape;
  const std::size_t rgb = std::size_t(n) * h * w * 3;
  if (resp.denoised_rgb.size() != rgb) throw UsageError("response rgb does not match its shape");
  std::string s = detail::frame(header, rgb + resp.denoised_latent.size() + resp.rendered_latent.size());
  detail::put_floats(s, resp.denoised_rgb);
  if (resp.has_latent) {
    detail::put_floats(s, resp.denoised_latent);
    detail::put_floats(s, resp.rendered_latent);
  }
  return s;
}

inline GuidanceResponse decode_response(std::string_view bytes) {
  auto [h, offset] = detail::unframe(bytes);
  GuidanceResponse r;
  r.provider_id = detail::field<std::string>(h, "provider_id");
  r.has_latent = detail::field<bool>(h, "has_latent");
  const auto rgb_shape = detail::field<std::vector<std::int64_t>>(h, "rgb_shape");
  if (rgb_shape.size() != 4 || rgb_shape[3] != 3) throw PayloadError("rgb_shape must be [N, H, W, 3]");
  const std::size_t n_rgb = detail::shape_numel(rgb_shape, "rgb_shape");
  std::size_t n_lat = 0;
  if (r.has_latent) {
    const auto ls = detail::field<std::vector<std::int64_t>>(h, "latent_shape");
    if (ls.size() != 4) throw PayloadError("latent_shape must have four entries");
    n_lat = detail::shape_numel(ls, "latent_shape");
    for (int i = 0; i < 4; ++i) r.latent_shape[i] = static_cast<int>(ls[i]);
  }
  const std::size_t expect = 4 * (n_rgb + 2 * n_lat);
  if (bytes.size() - offset != expect)
    throw PayloadError("response payload holds " + std::to_string(bytes.size() - offset) +
                       " bytes, expected " + std::to_string(expect));
  r.denoised_rgb = detail::get_floats(bytes, offset, n_rgb);
  if (r.has_latent) {
    r.denoised_latent = detail::get_floats(bytes, offset + 4 * n_rgb, n_lat);
    r.rendered_latent = detail::get_floats(bytes, offset + 4 * (n_rgb + n_lat), n_lat);
  }
  return r;
}

inline std::string health_body() { return Json{{"version", std::string(kVersionString)}}.dump(); }

// Validates a health answer; raises VersionError on a mismatch.
inline Json check_health(std::string_view body) {
  Json j;
  try {
    j = Json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw PayloadError(std::string("malformed health response: ") + e.what());
  }
  if (!j.is_object() || !j.contains("version") || !j["version"].is_string())
    throw PayloadError("health response lacks a version string");
  if (j["version"].get<std::string>() != kVersionString)
    throw VersionError("guidance service speaks protocol version '" +
                       j["version"].get<std::string>() + "', expected '1'");
  return j;
}

}  // namespace d4d::protocol
