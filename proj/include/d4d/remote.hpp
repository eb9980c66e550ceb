#pragma once

// HTTP guidance provider speaking the protocol in protocol.hpp, plus an
// in-process echo bridge used by the conformance tests.

#include "d4d/core.hpp"
#include "d4d/guidance.hpp"
#include "d4d/protocol.hpp"

#include "httplib.h"  // vendored cpp-httplib

#include <atomic>
#include <chrono>
#include <memory>
#include <string>
#include <thread>

namespace d4d {

struct RemoteOptions {
  double timeout_s = 120.0;
  int retries = 3;
  // First retry waits this long; each further retry doubles it.
  double backoff_s = 0.05;
};

class RemoteProvider : public GuidanceProvider {
 public:
  // Performs the health check; raises VersionError on a protocol mismatch
  // and TransportError when the service cannot be reached.
  RemoteProvider(std::string endpoint, RemoteOptions opt = {})
      : endpoint_(std::move(endpoint)), opt_(opt), client_(endpoint_) {
    const auto us = static_cast<long>(opt_.timeout_s * 1e6);
    client_.set_connection_timeout(us / 1000000, us % 1000000);
    client_.set_read_timeout(us / 1000000, us % 1000000);
    client_.set_write_timeout(us / 1000000, us % 1000000);
    auto res = client_.Get("/v1/health");
    if (!res) throw_transport(res.error(), "health check");
    if (res->status != 200)
      throw TransportError("health check at " + endpoint_ + " returned HTTP " +
                           std::to_string(res->status));
    const auto h = protocol::check_health(res->body);
    latent_ = h.contains("latent_support") && h["latent_support"].is_boolean() &&
              h["latent_support"].get<bool>();
  }

  std::string id() const override { return "remote:" + endpoint_; }
  bool supports(GuidanceKind) const override { return true; }
  bool latent_support() const override { return latent_; }

  GuidanceResponse denoise(const GuidanceRequest& req) override {
    const std::string body = protocol::encode_request(req);
    for (int attempt = 0;; ++attempt) {
      try {
        auto resp = attempt_once(body);
        check_response(req, resp);
        return resp;
      } catch (const VersionError&) {
        throw;  // never retried
      } catch (const ProviderError&) {
        throw;
      } catch (const TransportError&) {
        if (attempt >= opt_.retries) throw;
      }
      std::this_thread::sleep_for(
          std::chrono::duration<double>(opt_.backoff_s * double(1 << std::min(attempt, 10))));
    }
  }

  int attempts_made() const { return attempts_; }

 private:
  GuidanceResponse attempt_once(const std::string& body) {
    ++attempts_;
    auto res = client_.Post("/v1/denoise", body, "application/octet-stream");
    if (!res) throw_transport(res.error(), "denoise");
    const int status = res->status;
    if (status == 200) return protocol::decode_response(res->body);
    if (status == 429 || status == 503)
      throw TransportError("guidance service busy (HTTP " + std::to_string(status) + ")");
    throw ProviderError("guidance service error HTTP " + std::to_string(status) + ": " +
                        res->body.substr(0, 200));
  }

  [[noreturn]] void throw_transport(httplib::Error e, const std::string& what) const {
    const std::string msg = what + " at " + endpoint_ + ": " + httplib::to_string(e);
    if (e == httplib::Error::ConnectionTimeout || e == httplib::Error::Read ||
        e == httplib::Error::Write)
      throw TimeoutError(msg);
    throw TransportError(msg);
  }

  std::string endpoint_;
  RemoteOptions opt_;
  httplib::Client client_;
  bool latent_ = false;
  int attempts_ = 0;
};

// Echo bridge: every request comes back with its images as the denoised
// target. Faults can be injected to exercise the client's error paths.
class MockBridge {
 public:
  enum class Fault { kNone, kWrongVersion, kTruncate, kServerError };

  MockBridge() {
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      std::string body = protocol::health_body();
      if (fault_ == Fault::kWrongVersion) body = R"({"version":"2"})";
      res.set_content(body, "application/json");
    });
    server_.Post("/v1/denoise", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      GuidanceRequest g;
      try {
        g = protocol::decode_request(req.body);
      } catch (const Error& e) {
        res.status = 400;
        res.set_content(e.what(), "text/plain");
        return;
      }
      if (fault_ == Fault::kServerError) {
        res.status = 500;
        res.set_content("mock model failure", "text/plain");
        return;
      }
      std::string out = respond(g);
      if (fault_ == Fault::kWrongVersion) out[7] = '2';
      if (fault_ == Fault::kTruncate) out.resize(out.size() / 2);
      res.set_content(out, "application/octet-stream");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw TransportError("mock bridge could not bind a port");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockBridge() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  MockBridge(const MockBridge&) = delete;
  MockBridge& operator=(const MockBridge&) = delete;

  // Echo response bytes for a decoded request (shared with the fixtures).
  static std::string respond(const GuidanceRequest& g) {
    GuidanceResponse r;
    r.provider_id = "mock-echo";
    r.denoised_rgb = g.images;
    return protocol::encode_response(r, g.n, g.height, g.width);
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  void set_fault(Fault f) { fault_ = f; }
  int requests() const { return requests_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<Fault> fault_{Fault::kNone};
  std::atomic<int> requests_{0};
};

}  // namespace d4d
