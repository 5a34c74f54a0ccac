#include "medroute/backends/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "medroute/core/base64.hpp"
#include "medroute/core/serialization.hpp"

namespace medroute::backends {

using nlohmann::json;

std::string_view role_name(MessageRole role) {
  switch (role) {
    case MessageRole::kSystem: return "system";
    case MessageRole::kUser: return "user";
    case MessageRole::kAssistant: return "assistant";
  }
  return "user";
}

void ChatMessage::validate() const {
  if (content.empty() && !image) throw ConfigError("chat message has neither content nor image");
}

void BackendConfig::validate() const {
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (!(timeout_s > 0.0)) throw ConfigError("timeout_s must be > 0");
  if (retry_backoff_s < 0.0) throw ConfigError("retry_backoff_s must be >= 0");
  if (base_url.empty()) throw ConfigError("base_url is empty");
}

HttpResponse HttplibTransport::post(const std::string& url,
                                    const std::vector<std::pair<std::string, std::string>>& headers,
                                    const std::string& body, double timeout_s) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url lacks a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  const auto secs = static_cast<time_t>(timeout_s);
  const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(path, h, body, "application/json");
  if (!res) throw TransportError("request to " + origin + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

HttpResponse MockTransport::reply(const std::string& content, int status) {
  json j = {{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}};
  return {status, j.dump()};
}

HttpResponse MockTransport::post(const std::string& url,
                                 const std::vector<std::pair<std::string, std::string>>& headers,
                                 const std::string& body, double) {
  std::unique_lock lock(mu_);
  requests_.push_back({url, headers, body});
  if (handler_) {
    const Request req = requests_.back();
    lock.unlock();
    return handler_(req);
  }
  if (script_.empty()) throw TransportError("mock transport has no scripted response");
  const auto& r = script_[std::min(next_, script_.size() - 1)];
  ++next_;
  return r;
}

std::vector<MockTransport::Request> MockTransport::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::size_t MockTransport::calls() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

Sleeper real_sleeper() {
  return [](double s) {
    if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
  };
}

std::string request_body(const BackendConfig& cfg, const std::vector<ChatMessage>& messages) {
  json msgs = json::array();
  for (const auto& m : messages) {
    m.validate();
    json entry = {{"role", role_name(m.role)}};
    if (m.image) {
      json parts = json::array();
      if (!m.content.empty()) parts.push_back({{"type", "text"}, {"text", m.content}});
      parts.push_back(
          {{"type", "image_url"},
           {"image_url", {{"url", "data:" + m.image->media_type + ";base64," + m.image->base64}}}});
      entry["content"] = std::move(parts);
    } else {
      entry["content"] = m.content;
    }
    msgs.push_back(std::move(entry));
  }
  // json objects are std::map backed, so keys serialize in sorted order.
  json body = {{"model", cfg.model_name}, {"messages", std::move(msgs)},
               {"temperature", cfg.temperature}};
  return body.dump();
}

std::string request_hash(const std::string& body) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(body.data(), body.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string parse_completion(const std::string& body, int status) {
  try {
    const json j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw BackendError(BackendError::Kind::kMalformedResponse, status,
                                                 "completion content is not a string");
    return content.get<std::string>();
  } catch (const json::exception& e) {
    throw BackendError(BackendError::Kind::kMalformedResponse, status,
                       std::string("malformed completion response: ") + e.what());
  }
}

std::string chat_complete(const BackendConfig& cfg, Transport& transport, const std::string& api_key,
                          const std::vector<ChatMessage>& messages, const Sleeper& sleep) {
  cfg.validate();
  const std::string body = request_body(cfg, messages);
  std::string url = cfg.base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  url += "/chat/completions";
  const std::vector<std::pair<std::string, std::string>> headers{
      {"Authorization", "Bearer " + api_key}, {"Accept", "application/json"}};

  int last_status = 0;
  std::string last_detail;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) sleep(cfg.retry_backoff_s * std::pow(2.0, attempt - 1));
    HttpResponse res;
    try {
      res = transport.post(url, headers, body, cfg.timeout_s);
    } catch (const TransportError& e) {
      last_status = 0;
      last_detail = e.what();
      spdlog::warn("chat request attempt {} failed: {}", attempt + 1, last_detail);
      continue;
    }
    if (res.status >= 200 && res.status < 300) return parse_completion(res.body, res.status);
    if (res.status == 401 || res.status == 403)
      throw BackendError(BackendError::Kind::kAuth, res.status,
                         "authentication failed (HTTP " + std::to_string(res.status) + ")");
    if (res.status == 429 || res.status >= 500) {
      last_status = res.status;
      last_detail = "HTTP " + std::to_string(res.status);
      spdlog::warn("chat request attempt {} got {}", attempt + 1, last_detail);
      continue;
    }
    throw BackendError(BackendError::Kind::kClient, res.status,
                       "request rejected (HTTP " + std::to_string(res.status) + "): " +
                           res.body.substr(0, 200));
  }
  throw BackendError(BackendError::Kind::kRetriesExhausted, last_status,
                     "gave up after " + std::to_string(cfg.max_retries + 1) +
                         " attempts; last error: " + last_detail);
}

namespace {

std::string key_from_env(const std::string& var) {
  const char* v = std::getenv(var.c_str());
  if (!v || !*v) throw ConfigError("environment variable " + var + " is not set");
  return v;
}

}  // namespace

HttpBackend::HttpBackend(BackendConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleep)
    : HttpBackend(cfg, std::move(transport), key_from_env(cfg.api_key_env), std::move(sleep)) {}

HttpBackend::HttpBackend(BackendConfig cfg, std::shared_ptr<Transport> transport,
                         std::string api_key, Sleeper sleep)
    : cfg_(std::move(cfg)),
      transport_(std::move(transport)),
      api_key_(std::move(api_key)),
      sleep_(std::move(sleep)) {
  cfg_.validate();
  if (!transport_) throw ConfigError("backend needs a transport");
}

std::string HttpBackend::complete(const std::vector<ChatMessage>& messages) {
  return chat_complete(cfg_, *transport_, api_key_, messages, sleep_);
}

ReplayBackend::ReplayBackend(ReplayMode mode, std::filesystem::path store, BackendConfig cfg,
                             std::shared_ptr<ChatBackend> inner)
    : mode_(mode), store_(std::move(store)), cfg_(std::move(cfg)), inner_(std::move(inner)) {
  if (mode_ == ReplayMode::kRecord && !inner_)
    throw ConfigError("record mode needs a backend to forward to");
  if (!std::filesystem::exists(store_)) {
    if (mode_ == ReplayMode::kReplay)
      throw DataError("replay store " + store_.string() + " does not exist");
    return;
  }
  std::ifstream in(store_);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      cache_[j.at("hash").get<std::string>()] = j.at("response").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(store_.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

std::string ReplayBackend::complete(const std::vector<ChatMessage>& messages) {
  const std::string hash = request_hash(request_body(cfg_, messages));
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(hash); it != cache_.end()) return it->second;
  }
  if (mode_ == ReplayMode::kReplay)
    throw BackendError(BackendError::Kind::kCacheMiss, 0, "replay store has no response for request " + hash);

  std::string response = inner_->complete(messages);
  std::lock_guard lock(mu_);
  if (cache_.emplace(hash, response).second) {
    std::ofstream out(store_, std::ios::app);
    if (!out) throw Error("cannot append to replay store " + store_.string());
    out << json{{"hash", hash}, {"response", response}}.dump() << '\n';
  }
  return response;
}

std::size_t ReplayBackend::entries() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

std::string media_type_for(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

std::string caption_image(ChatBackend& backend, const std::filesystem::path& image_ref,
                          const std::string& instruction) {
  const std::string bytes = core::read_text_file(image_ref);
  ChatMessage m = ChatMessage::user(instruction);
  m.image = ImagePayload{media_type_for(image_ref), core::base64_encode(bytes)};
  return backend.complete({m});
}

}  // namespace medroute::backends
