// JSON/PNG wire protocol over the session store.
//   POST /sessions                 {"checkpoint"?, "seed"?, "rows"?, "cols"?}
//   POST /sessions/{id}/resample   {"revision", "blocks": [[row, col], ...], "seeds"?}
//   POST /sessions/{id}/undo       {"revision"}
//   GET  /sessions/{id}/image.png
//   GET  /sessions/{id}/state
// Blocks are 1-based (row, col). JSON responses carry session_id and revision;
// mutating responses also carry the new image as base64 PNG. Errors are
// {"error": reason} with a 4xx/5xx status.
#pragma once

#include <memory>
#include <string>

#include "ssn/session.hpp"

namespace ssn::service {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

std::string base64(const std::vector<std::uint8_t>& bytes);

class Api {
 public:
  explicit Api(SessionStore& store) : store_(store) {}
  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) const;

 private:
  HttpResponse dispatch(const std::string& method, const std::string& path, const std::string& body) const;
  SessionStore& store_;
};

/// Blocking HTTP front end for an Api.
class HttpServer {
 public:
  explicit HttpServer(const Api& api);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ssn::service
