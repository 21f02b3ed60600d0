/*=========================================================================
 *
 *  Copyright The lesionkit contributors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         https://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/

#include "lesionkit/tagging.hpp"

#include <mutex>

#include <json.hpp>

#include "lesionkit/error.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro clashes with it.
#include <httplib.h>

namespace lesionkit::tagging {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

json candidate_json(const Candidate& c, const Manifest& m) {
  json j{{"id", c.id},
         {"name", c.name},
         {"classifiable", c.classifiable},
         {"size_bytes", c.size_bytes},
         {"preview", "/api/files/" + c.id + "/slice.png"}};
  if (c.classifiable) {
    j["dims"] = {c.dims[0], c.dims[1], c.dims[2]};
    j["spacing"] = {c.spacing.x(), c.spacing.y(), c.spacing.z()};
    j["datatype"] = c.datatype;
    j["gzipped"] = c.gzipped;
    j["slice_index"] = c.slice_index;
    j["middle_slice"] = {{"min", c.middle_slice.min}, {"max", c.middle_slice.max}, {"mean", c.middle_slice.mean}};
  } else {
    j["error"] = c.error;
  }
  if (const ManifestEntry* e = m.find(c.name))
    j["assignment"] = {{"subject_id", e->subject_id}, {"tag", e->tag.str()}, {"status", std::string(to_string(e->status))}};
  else
    j["assignment"] = nullptr;
  return j;
}

void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}}.dump());
}

const char* kDefaultIndex =
    "<!doctype html><title>lesionkit sort</title>"
    "<p>No UI assets configured. The JSON API is under <code>/api/</code>.</p>";

} // namespace

struct TaggingService::Impl {
  fs::path inbox;
  fs::path output_root;
  std::optional<fs::path> static_dir;
  httplib::Server server;
  mutable std::mutex mutex; // guards manifest
  Manifest manifest;

  fs::path manifest_path() const { return inbox / kManifestFileName; }

  void persist() { save_manifest(manifest, manifest_path()); }

  std::optional<Candidate> find_candidate(const std::string& id) const {
    for (auto& c : scan_inbox(inbox))
      if (c.id == id) return c;
    return std::nullopt;
  }

  // Accepts a candidate id or a file name within the inbox.
  std::optional<std::string> file_name_for(const std::string& key) const {
    for (const auto& c : scan_inbox(inbox))
      if (c.id == key || c.name == key) return c.name;
    return std::nullopt;
  }

  void routes() {
    // SO_REUSEADDR only: the library default adds SO_REUSEPORT, which would
    // let a second server share a port that is already in use.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });

    server.Get("/api/files", [this](const httplib::Request&, httplib::Response& res) {
      const auto files = scan_inbox(inbox);
      const Manifest m = snapshot();
      json arr = json::array();
      for (const auto& c : files) arr.push_back(candidate_json(c, m));
      send_json(res, 200, arr.dump(2));
    });

    server.Get(R"(/api/files/([0-9a-f]+)/slice\.png)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto c = find_candidate(req.matches[1]);
      if (!c) return send_error(res, 404, "unknown file id");
      if (!c->classifiable) return send_error(res, 422, "not a readable NIfTI file: " + c->error);
      const auto png = render_slice_png(c->path);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });

    server.Get("/api/manifest", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, snapshot().to_json());
    });

    server.Put("/api/manifest", [this](const httplib::Request& req, httplib::Response& res) {
      Manifest incoming;
      try {
        incoming = Manifest::from_json(req.body);
      } catch (const Error& e) {
        return send_error(res, 400, e.what());
      }
      std::lock_guard lock(mutex);
      if (incoming.version != manifest.version) {
        res.status = 409;
        return res.set_content(json{{"error", "stale manifest version"}, {"version", manifest.version}}.dump(), "application/json");
      }
      incoming.version = manifest.version + 1;
      manifest = std::move(incoming);
      persist();
      send_json(res, 200, manifest.to_json());
    });

    server.Post("/api/assign", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
        const auto name = file_name_for(body.at("file").get<std::string>());
        if (!name) return send_error(res, 404, "unknown file");
        const std::string token = body.at("tag").get<std::string>();
        const std::string subject = body.at("subject").get<std::string>();
        if (!SequenceTag::is_valid_token(token)) return send_error(res, 400, "invalid sequence tag '" + token + "'");
        if (!is_valid_subject_id(subject)) return send_error(res, 400, "invalid subject id '" + subject + "'");
        const SequenceTag tag = SequenceTag::parse(token);
        std::lock_guard lock(mutex);
        manifest = assign(manifest, *name, subject, tag, inbox);
        persist();
        send_json(res, 200, json{{"version", manifest.version}, {"manifest", json::parse(manifest.to_json())}}.dump(2));
      } catch (const json::exception& e) {
        send_error(res, 400, std::string("expected {\"file\", \"subject\", \"tag\"}: ") + e.what());
      } catch (const InvalidArgument& e) {
        send_error(res, 409, e.what());
      }
    });

    server.Post("/api/unassign", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto key = json::parse(req.body).at("file").get<std::string>();
        const auto name = file_name_for(key);
        std::lock_guard lock(mutex);
        manifest = unassign(manifest, name.value_or(key));
        persist();
        send_json(res, 200, json{{"version", manifest.version}, {"manifest", json::parse(manifest.to_json())}}.dump(2));
      } catch (const json::exception& e) {
        send_error(res, 400, std::string("expected {\"file\"}: ") + e.what());
      }
    });

    server.Post("/api/commit", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(mutex);
      const CommitReport report = commit(manifest, output_root, inbox);
      persist();
      json j = json::parse(report.to_json());
      j["version"] = manifest.version;
      send_json(res, report.failed == 0 ? 200 : 207, j.dump(2));
    });

    if (static_dir) {
      server.set_mount_point("/", static_dir->string());
    } else {
      server.Get("/", [](const httplib::Request&, httplib::Response& res) { res.set_content(kDefaultIndex, "text/html"); });
    }

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    });
  }

  Manifest snapshot() const {
    std::lock_guard lock(mutex);
    return manifest;
  }
};

TaggingService::TaggingService(fs::path inbox, fs::path output_root, std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>()) {
  std::error_code ec;
  if (!fs::is_directory(inbox, ec)) throw IoError("inbox '" + inbox.string() + "' is not a directory");
  impl_->inbox = std::move(inbox);
  impl_->output_root = std::move(output_root);
  impl_->static_dir = std::move(static_dir);
  if (fs::exists(impl_->manifest_path())) impl_->manifest = load_manifest(impl_->manifest_path());
  impl_->routes();
}

TaggingService::~TaggingService() { stop(); }

int TaggingService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  return port;
}

void TaggingService::run() { impl_->server.listen_after_bind(); }

void TaggingService::stop() { impl_->server.stop(); }

Manifest TaggingService::manifest() const { return impl_->snapshot(); }

} // namespace lesionkit::tagging
