#pragma once

#include <functional>
#include <memory>
#include <string>

// Eigen goes first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include "deepssn/service.hpp"

#include <httplib.h>

namespace deepssn {

/// Wires the service onto an httplib server. `reload`, when given, backs
/// POST /admin/reload and returns the replacement snapshot.
inline void mount_routes(httplib::Server& server, SearchService& service,
                         std::function<std::shared_ptr<const ServingSnapshot>()> reload = {}) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Post("/query", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.query(req.body));
  });
  server.Get(R"(/scenes/([^/]+)/raster)", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.raster(req.matches[1]));
  });
  server.Get(R"(/scenes/([^/]+))", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.scene(req.matches[1]));
  });
  server.Post("/feedback", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.feedback(req.body));
  });
  server.Get("/health", [&service, send](const httplib::Request&, httplib::Response& res) {
    const auto snap = service.snapshot();
    send(res, json_reply(200, {{"status", "ok"}, {"indexed", snap ? snap->index.size() : 0}}));
  });
  if (reload) {
    server.Post("/admin/reload", [&service, reload, send](const httplib::Request&, httplib::Response& res) {
      try {
        service.swap_snapshot(reload());
        send(res, json_reply(200, {{"status", "reloaded"}, {"indexed", service.snapshot()->index.size()}}));
      } catch (const std::exception& e) {
        send(res, error_reply(500, std::string("reload failed: ") + e.what()));
      }
    });
  }
}

}  // namespace deepssn
