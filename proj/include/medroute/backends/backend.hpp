#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "medroute/core/error.hpp"

namespace medroute::backends {

enum class MessageRole { kSystem, kUser, kAssistant };

std::string_view role_name(MessageRole role);

struct ImagePayload {
  std::string media_type;  // e.g. image/png
  std::string base64;
};

struct ChatMessage {
  MessageRole role = MessageRole::kUser;
  std::string content;
  std::optional<ImagePayload> image;

  static ChatMessage system(std::string text) { return {MessageRole::kSystem, std::move(text), {}}; }
  static ChatMessage user(std::string text) { return {MessageRole::kUser, std::move(text), {}}; }

  /// Throws ConfigError when both content and image are empty.
  void validate() const;
};

struct BackendConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-4.1-mini";
  std::string api_key_env = "MEDROUTE_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 3;
  double retry_backoff_s = 1.0;
  double temperature = 0.0;

  void validate() const;
};

class BackendError : public Error {
 public:
  enum class Kind { kAuth, kRetriesExhausted, kMalformedResponse, kClient, kCacheMiss };

  BackendError(Kind kind, int status, const std::string& what)
      : Error(what), kind_(kind), status_(status) {}

  Kind kind() const { return kind_; }
  /// Last HTTP status seen; 0 when the transport never produced one.
  int status() const { return status_; }

 private:
  Kind kind_;
  int status_;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// Network failure or timeout below the HTTP layer. Retried like a 5xx.
class TransportError : public Error {
 public:
  using Error::Error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& url,
                            const std::vector<std::pair<std::string, std::string>>& headers,
                            const std::string& body, double timeout_s) = 0;
};

/// Live HTTP(S) transport. Each request opens its own client, so one instance serves
/// concurrent callers.
class HttplibTransport : public Transport {
 public:
  HttpResponse post(const std::string& url,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body, double timeout_s) override;
};

/// Scripted transport for tests. Responses are consumed in order; the last one repeats.
class MockTransport : public Transport {
 public:
  struct Request {
    std::string url;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;
  };
  using Handler = std::function<HttpResponse(const Request&)>;

  MockTransport() = default;
  explicit MockTransport(std::vector<HttpResponse> script) : script_(std::move(script)) {}
  explicit MockTransport(Handler handler) : handler_(std::move(handler)) {}

  /// Body shaped like a chat-completions reply carrying `content`.
  static HttpResponse reply(const std::string& content, int status = 200);

  HttpResponse post(const std::string& url,
                    const std::vector<std::pair<std::string, std::string>>& headers,
                    const std::string& body, double timeout_s) override;

  std::vector<Request> requests() const;
  std::size_t calls() const;

 private:
  mutable std::mutex mu_;
  std::vector<HttpResponse> script_;
  Handler handler_;
  std::vector<Request> requests_;
  std::size_t next_ = 0;
};

using Sleeper = std::function<void(double seconds)>;
Sleeper real_sleeper();

/// Canonical request body: keys sorted, no insignificant whitespace.
std::string request_body(const BackendConfig& cfg, const std::vector<ChatMessage>& messages);
/// Lowercase hex SHA-256 of `body`.
std::string request_hash(const std::string& body);

/// Extracts choices[0].message.content; BackendError(kMalformedResponse) otherwise.
std::string parse_completion(const std::string& body, int status);

/// One chat-completions call with retries on 429, 5xx and transport errors.
std::string chat_complete(const BackendConfig& cfg, Transport& transport, const std::string& api_key,
                          const std::vector<ChatMessage>& messages, const Sleeper& sleep);

/// What agents talk to.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

class HttpBackend : public ChatBackend {
 public:
  /// The API key is read from cfg.api_key_env on construction; ConfigError when unset.
  HttpBackend(BackendConfig cfg, std::shared_ptr<Transport> transport, Sleeper sleep = real_sleeper());
  HttpBackend(BackendConfig cfg, std::shared_ptr<Transport> transport, std::string api_key,
              Sleeper sleep = real_sleeper());

  std::string complete(const std::vector<ChatMessage>& messages) override;
  const BackendConfig& config() const { return cfg_; }

 private:
  BackendConfig cfg_;
  std::shared_ptr<Transport> transport_;
  std::string api_key_;
  Sleeper sleep_;
};

enum class ReplayMode { kRecord, kReplay };

/// Record/replay layer keyed by the hash of the canonical request body. The store is a
/// JSONL file of {"hash", "response"} objects.
class ReplayBackend : public ChatBackend {
 public:
  /// `inner` may be null in replay mode. Replay mode requires the store to exist.
  ReplayBackend(ReplayMode mode, std::filesystem::path store, BackendConfig cfg,
                std::shared_ptr<ChatBackend> inner);

  std::string complete(const std::vector<ChatMessage>& messages) override;
  std::size_t entries() const;

 private:
  ReplayMode mode_;
  std::filesystem::path store_;
  BackendConfig cfg_;
  std::shared_ptr<ChatBackend> inner_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::string> cache_;
};

/// Media type guessed from the file extension.
std::string media_type_for(const std::filesystem::path& path);

/// Sends the image with `instruction` as one user message and returns the caption.
std::string caption_image(ChatBackend& backend, const std::filesystem::path& image_ref,
                          const std::string& instruction);

}  // namespace medroute::backends
