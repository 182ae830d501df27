#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "evoforge/error.hpp"
#include "evoforge/gateway.hpp"
#include "evoforge/mocks.hpp"

namespace evoforge {
namespace {

std::string base64(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string mime_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

// URL passthrough for remote and data URIs; local files become data URIs.
std::string image_url(const std::string& ref, const std::filesystem::path& asset_root) {
  if (ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:")) return ref;
  if (ref.starts_with("sha256:")) {
    throw BackendError("image digest reference has no payload to send: " + ref, /*retryable=*/false);
  }
  std::filesystem::path path(ref);
  if (path.is_relative()) path = asset_root / path;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BackendError("cannot read image " + path.string(), false);
  std::stringstream ss;
  ss << in.rdbuf();
  return "data:" + mime_for(path) + ";base64," + base64(ss.str());
}

struct Url {
  std::string scheme_host_port;
  std::string path;
};

Url split_url(const std::string& endpoint) {
  const auto scheme_end = endpoint.find("://");
  const auto path_start = endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {endpoint, "/"};
  return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

class HttpBackend : public ChatBackend {
 public:
  HttpBackend(BackendConfig config, std::filesystem::path asset_root)
      : config_(std::move(config)), asset_root_(std::move(asset_root)), url_(split_url(config_.endpoint)) {}

  const BackendConfig& config() const override { return config_; }

  std::string complete(const ChatRequest& request) override {
    httplib::Client client(url_.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers headers;
    if (!config_.auth_env.empty()) {
      const char* secret = std::getenv(config_.auth_env.c_str());
      if (!secret) throw BackendError("environment variable " + config_.auth_env + " is not set", false);
      headers.emplace("Authorization", std::string("Bearer ") + secret);
    }
    const std::string body = chat_request_body(config_, request, asset_root_).dump();
    auto res = client.Post(url_.path, headers, body, "application/json");
    if (!res) {
      throw BackendError("transport error: " + httplib::to_string(res.error()), /*retryable=*/true);
    }
    const int status = res->status;
    if (status == 429 || status >= 500) {
      throw BackendError("HTTP " + std::to_string(status), true, status);
    }
    if (status < 200 || status >= 300) {
      throw BackendError("HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200), false, status);
    }
    json parsed = json::parse(res->body, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) throw BackendError("response is not JSON", true, status);
    return chat_response_text(parsed);
  }

 private:
  BackendConfig config_;
  std::filesystem::path asset_root_;
  Url url_;
};

class EchoBackend : public ChatBackend {
 public:
  explicit EchoBackend(BackendConfig config) : config_(std::move(config)) {}
  const BackendConfig& config() const override { return config_; }
  std::string complete(const ChatRequest& request) override {
    return request.messages.empty() ? std::string{} : request.messages.back().text();
  }

 private:
  BackendConfig config_;
};

double param(const std::map<std::string, std::string>& params, const std::string& key, double fallback) {
  const auto it = params.find(key);
  if (it == params.end()) return fallback;
  try {
    const double v = std::stod(it->second);
    if (v < 0.0 || v > 1.0) throw std::out_of_range(key);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::validation, "mock parameter out of range", {{"key", key}, {"value", it->second}});
  }
}

}  // namespace

json chat_request_body(const BackendConfig& config, const ChatRequest& request, const std::filesystem::path& asset_root) {
  json messages = json::array();
  for (const auto& msg : request.messages) {
    const auto imgs = msg.images();
    json content;
    if (imgs.empty()) {
      content = msg.text();
    } else {
      content = json::array();
      for (const auto& part : msg.parts) {
        if (part.kind == ContentPart::Kind::text) {
          content.push_back({{"type", "text"}, {"text", part.value}});
        } else {
          content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_url(part.value, asset_root)}}}});
        }
      }
    }
    messages.push_back({{"role", to_string(msg.role)}, {"content", std::move(content)}});
  }
  return json{{"model", config.model_name},
              {"messages", std::move(messages)},
              {"temperature", request.sampling.temperature},
              {"max_tokens", request.sampling.max_tokens}};
}

std::string chat_response_text(const json& body) {
  if (!body.contains("choices") || !body["choices"].is_array() || body["choices"].empty()) {
    throw BackendError("response has no choices", true);
  }
  const json& message = body["choices"][0].value("message", json::object());
  const json content = message.value("content", json());
  if (content.is_string()) return content.get<std::string>();
  if (content.is_array()) {
    std::string out;
    for (const auto& part : content)
      if (part.value("type", "") == "text") out += part.value("text", "");
    return out;
  }
  throw BackendError("response message has no text content", true);
}

std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config, const std::filesystem::path& asset_root) {
  config.validate();
  if (config.endpoint.starts_with("http://") || config.endpoint.starts_with("https://")) {
    return std::make_shared<HttpBackend>(config, asset_root);
  }
  if (config.endpoint.starts_with("mock://")) {
    const auto [kind, params] = parse_mock_endpoint(config.endpoint);
    if (kind == "solver") return std::make_shared<SolverBackend>(config, param(params, "accuracy", 1.0), param(params, "recovery", 1.0));
    if (kind == "reflector") return std::make_shared<SolverBackend>(config, param(params, "accuracy", 1.0), param(params, "recovery", 1.0));
    if (kind == "oracle-judge") {
      return std::make_shared<OracleJudgeBackend>(config, param(params, "false_reject", 0.0), param(params, "false_accept", 0.0));
    }
    if (kind == "echo") return std::make_shared<EchoBackend>(config);
    fail(ErrorCode::validation, "unknown mock backend", {{"endpoint", config.endpoint}});
  }
  fail(ErrorCode::validation, "no backend available for endpoint", {{"endpoint", config.endpoint}, {"tag", config.tag}});
}

}  // namespace evoforge
