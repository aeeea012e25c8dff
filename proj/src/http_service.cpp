#include "ssn/http_service.hpp"

#include <httplib.h>

#include <regex>

namespace ssn::service {

using nlohmann::json;

namespace {

HttpResponse json_response(int status, const json& j) { return {status, "application/json", j.dump()}; }

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    json j = json::parse(body);
    if (!j.is_object()) throw ServiceError(400, "request body must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ServiceError(400, std::string("malformed JSON: ") + e.what());
  }
}

std::uint64_t required_revision(const json& j) {
  if (!j.contains("revision")) throw ServiceError(400, "missing revision");
  return j.at("revision").get<std::uint64_t>();
}

json with_image(json state, const std::vector<std::uint8_t>& png) {
  state["image_png"] = base64(png);
  return state;
}

}  // namespace

std::string base64(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t n = (static_cast<std::uint32_t>(bytes[i]) << 16) |
                            (i + 1 < bytes.size() ? static_cast<std::uint32_t>(bytes[i + 1]) << 8 : 0) |
                            (i + 2 < bytes.size() ? bytes[i + 2] : 0);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(n >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kAlphabet[n & 63] : '=';
  }
  return out;
}

HttpResponse Api::handle(const std::string& method, const std::string& path, const std::string& body) const {
  try {
    return dispatch(method, path, body);
  } catch (const ServiceError& e) {
    return json_response(e.status(), {{"error", e.what()}});
  } catch (const json::exception& e) {
    return json_response(400, {{"error", std::string("bad request field: ") + e.what()}});
  } catch (const std::exception& e) {
    return json_response(500, {{"error", e.what()}});
  }
}

HttpResponse Api::dispatch(const std::string& method, const std::string& path, const std::string& body) const {
  static const std::regex session_route(R"(^/sessions/([A-Za-z0-9]+)/(resample|undo|image\.png|state)$)");
  if (path == "/sessions") {
    if (method != "POST") throw ServiceError(405, "use POST /sessions");
    const json req = parse_body(body);
    const auto opt_int = [&](const char* key) -> std::optional<int> {
      if (!req.contains(key)) return std::nullopt;
      return req.at(key).get<int>();
    };
    const std::string id = store_.create(req.value("checkpoint", std::string{}), req.value("seed", std::uint64_t{0}),
                                         opt_int("rows"), opt_int("cols"));
    return store_.with_session(id, false, [](const Session& s) {
      return json_response(201, with_image(s.state(), s.png()));
    });
  }
  std::smatch m;
  if (!std::regex_match(path, m, session_route)) throw ServiceError(404, "no route for " + path);
  const std::string id = m[1], action = m[2];
  const bool get = action == "image.png" || action == "state";
  if (method != (get ? "GET" : "POST")) throw ServiceError(405, "use " + std::string(get ? "GET" : "POST") + " " + path);

  if (action == "state") {
    return store_.with_session(id, false, [](const Session& s) { return json_response(200, s.state()); });
  }
  if (action == "image.png") {
    return store_.with_session(id, false, [](const Session& s) {
      return HttpResponse{200, "image/png", std::string(s.png().begin(), s.png().end())};
    });
  }
  const json req = parse_body(body);
  const std::uint64_t revision = required_revision(req);
  if (action == "undo") {
    return store_.with_session(id, true, [&](Session& s) {
      s.undo(revision);
      return json_response(200, with_image(s.state(), s.png()));
    });
  }
  return store_.with_session(id, true, [&](Session& s) {
    if (!req.contains("blocks") || !req.at("blocks").is_array()) throw ServiceError(400, "resample: missing blocks");
    std::vector<std::size_t> targets;
    for (const auto& b : req.at("blocks")) {
      if (!b.is_array() || b.size() != 2) throw ServiceError(400, "resample: blocks are [row, col] pairs");
      targets.push_back(s.block_index(b[0].get<int>(), b[1].get<int>()));
    }
    const auto seeds = req.value("seeds", std::vector<std::uint64_t>{});
    const ResampleOutcome out = s.resample(targets, revision, seeds);
    json j = with_image(s.state(), out.png);
    const int cols = s.latent().cols();
    json changed = json::array(), change = json::array();
    for (int r = 0; r < s.latent().rows(); ++r) {
      json crow = json::array(), vrow = json::array();
      for (int c = 0; c < cols; ++c) {
        crow.push_back(static_cast<bool>(out.changed[r * cols + c]));
        vrow.push_back(out.block_change[r * cols + c]);
      }
      changed.push_back(crow);
      change.push_back(vrow);
    }
    j["changed"] = changed;
    j["block_change"] = change;
    j["distortion_outside"] = out.distortion_outside;
    return json_response(200, j);
  });
}

// ---------------------------------------------------------------------------

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const Api& api) : impl_(std::make_unique<Impl>()) {
  const auto route = [&api](const httplib::Request& req, httplib::Response& res) {
    const HttpResponse r = api.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body, r.content_type.c_str());
  };
  impl_->server.Get(R"(/sessions.*)", route);
  impl_->server.Post(R"(/sessions.*)", route);
  impl_->server.Options(R"(/sessions.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host.c_str());
    if (p < 0) throw std::runtime_error("serve: cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host.c_str(), port)) {
    throw std::runtime_error("serve: cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

}  // namespace ssn::service
