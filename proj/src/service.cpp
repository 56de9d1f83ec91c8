#include "hfusion/service.h"

#include <httplib.h>

#include <fstream>
#include <sstream>

#include "hfusion/errors.h"
#include "hfusion/image.h"

namespace hfusion::service {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::kPending: return "pending";
    case TaskStatus::kAutoAnnotated: return "auto_annotated";
    case TaskStatus::kInReview: return "in_review";
    case TaskStatus::kAccepted: return "accepted";
  }
  return "pending";
}

TaskStatus status_from_string(const std::string& s) {
  if (s == "pending") return TaskStatus::kPending;
  if (s == "auto_annotated") return TaskStatus::kAutoAnnotated;
  if (s == "in_review") return TaskStatus::kInReview;
  if (s == "accepted") return TaskStatus::kAccepted;
  throw ValidationError("unknown task status: " + s);
}

json to_json(const AnnotationTask& task) {
  json j;
  j["triplet_id"] = task.triplet_id;
  j["status"] = to_string(task.status);
  j["assigned_to"] = task.assigned_to ? json(*task.assigned_to) : json(nullptr);
  j["record"] = task.record ? json::parse(annotation::serialize_annotation(*task.record))
                            : json(nullptr);
  return j;
}

AnnotationTask task_from_json(const json& j, annotation::ImageDims dims) {
  AnnotationTask t;
  t.triplet_id = j.at("triplet_id").get<std::string>();
  t.status = status_from_string(j.at("status").get<std::string>());
  if (!j.at("assigned_to").is_null()) t.assigned_to = j.at("assigned_to").get<std::string>();
  if (!j.at("record").is_null()) {
    t.record = annotation::parse_annotation(j.at("record").dump(), dims, t.triplet_id);
  }
  return t;
}

namespace {

Response error(int status, const std::string& message) {
  return {status, json{{"error", message}}};
}

Response conflict(const AnnotationTask& task, const std::string& action) {
  return error(409, "cannot " + action + " task " + task.triplet_id + " in status " +
                        to_string(task.status));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

AnnotationStore::AnnotationStore(fs::path dir, const data::Manifest& manifest)
    : dir_(std::move(dir)), events_path_(dir_ / "events.jsonl") {
  fs::create_directories(dir_ / "tasks");
  for (const auto& t : manifest.triplets) {
    const Image fused = load_image(t.fused_path);
    Entry e{t, {fused.height, fused.width}, std::make_unique<std::mutex>()};
    entries_.emplace(t.triplet_id, std::move(e));
    if (!fs::exists(task_path(t.triplet_id))) {
      write_task(AnnotationTask{t.triplet_id, TaskStatus::kPending, std::nullopt, std::nullopt});
    }
  }
  if (fs::exists(events_path_)) {
    std::ifstream in(events_path_);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) next_seq_ = json::parse(line).at("seq").get<long>() + 1;
    }
  }
}

fs::path AnnotationStore::task_path(const std::string& id) const {
  return dir_ / "tasks" / (id + ".json");
}

AnnotationTask AnnotationStore::read_task(const std::string& id) const {
  return task_from_json(json::parse(read_file(task_path(id))), entries_.at(id).dims);
}

void AnnotationStore::write_task(const AnnotationTask& task) const {
  const fs::path path = task_path(task.triplet_id);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + tmp.string());
    out << to_json(task).dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

void AnnotationStore::append_event(json event) {
  std::lock_guard lock(log_mutex_);
  json line;
  line["seq"] = next_seq_++;
  for (auto& [k, v] : event.items()) line[k] = v;
  std::ofstream out(events_path_, std::ios::app);
  out << line.dump() << '\n';
  out.flush();
  if (!out) throw RuntimeFailure("cannot append to " + events_path_.string());
}

Response AnnotationStore::list(const std::optional<std::string>& status) const {
  std::optional<TaskStatus> filter;
  if (status) {
    try {
      filter = status_from_string(*status);
    } catch (const ValidationError& e) {
      return error(400, e.what());
    }
  }
  json tasks = json::array();
  for (const auto& [id, entry] : entries_) {
    std::lock_guard lock(*entry.mutex);
    const AnnotationTask t = read_task(id);
    if (filter && t.status != *filter) continue;
    tasks.push_back({{"triplet_id", id}, {"status", to_string(t.status)}});
  }
  return {200, json{{"tasks", tasks}}};
}

Response AnnotationStore::get(const std::string& triplet_id) const {
  const auto it = entries_.find(triplet_id);
  if (it == entries_.end()) return error(404, "unknown task " + triplet_id);
  AnnotationTask t;
  {
    std::lock_guard lock(*it->second.mutex);
    t = read_task(triplet_id);
  }
  json body = to_json(t);
  body["width"] = it->second.dims.width;
  body["height"] = it->second.dims.height;
  body["images"] = {{"visible", "/images/" + triplet_id + "/visible"},
                    {"infrared", "/images/" + triplet_id + "/infrared"},
                    {"fused", "/images/" + triplet_id + "/fused"}};
  return {200, body};
}

Response AnnotationStore::submit_annotation(const std::string& triplet_id,
                                            const std::string& body) {
  const auto it = entries_.find(triplet_id);
  if (it == entries_.end()) return error(404, "unknown task " + triplet_id);
  annotation::AnnotationRecord record;
  bool auto_annotated = true;
  try {
    record = annotation::parse_annotation(body, it->second.dims, triplet_id);
    const json doc = json::parse(body);
    if (doc.contains("auto_annotated")) {
      if (!doc["auto_annotated"].is_boolean()) throw SchemaError("\"auto_annotated\" must be a boolean");
      auto_annotated = doc["auto_annotated"].get<bool>();
    }
  } catch (const ValidationError& e) {
    return error(400, e.what());
  }
  record.reviewed = false;

  std::lock_guard lock(*it->second.mutex);
  AnnotationTask task = read_task(triplet_id);
  if (task.status != TaskStatus::kPending) return conflict(task, "annotate");
  task.status = auto_annotated ? TaskStatus::kAutoAnnotated : TaskStatus::kInReview;
  task.record = record;
  write_task(task);
  append_event(json{{"type", "annotation"}, {"task", to_json(task)}});
  return {200, to_json(task)};
}

Response AnnotationStore::review(const std::string& triplet_id, const std::string& body) {
  const auto it = entries_.find(triplet_id);
  if (it == entries_.end()) return error(404, "unknown task " + triplet_id);
  std::string action;
  std::string reviewer;
  std::optional<annotation::AnnotationRecord> corrected;
  try {
    json doc;
    try {
      doc = json::parse(body);
    } catch (const json::parse_error& e) {
      throw SchemaError(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("action") || !doc["action"].is_string()) {
      throw SchemaError("missing key \"action\"");
    }
    action = doc["action"].get<std::string>();
    if (action != "claim" && action != "accept" && action != "reject") {
      throw SchemaError("\"action\" must be claim, accept or reject");
    }
    if (doc.contains("reviewer")) {
      if (!doc["reviewer"].is_string()) throw SchemaError("\"reviewer\" must be a string");
      reviewer = doc["reviewer"].get<std::string>();
    }
    if (doc.contains("record") && !doc["record"].is_null()) {
      corrected = annotation::parse_annotation(doc["record"].dump(), it->second.dims, triplet_id);
    }
  } catch (const ValidationError& e) {
    return error(400, e.what());
  }

  std::lock_guard lock(*it->second.mutex);
  AnnotationTask task = read_task(triplet_id);
  if (action == "claim") {
    if (task.status != TaskStatus::kAutoAnnotated) return conflict(task, "claim");
    task.status = TaskStatus::kInReview;
    if (!reviewer.empty()) task.assigned_to = reviewer;
  } else if (action == "accept") {
    if (task.status != TaskStatus::kAutoAnnotated && task.status != TaskStatus::kInReview) {
      return conflict(task, "accept");
    }
    if (corrected) {
      const std::string annotator = task.record ? task.record->annotator : std::string{};
      task.record = *corrected;
      if (task.record->annotator.empty()) task.record->annotator = annotator;
    }
    task.record->reviewed = true;
    task.status = TaskStatus::kAccepted;
    if (!reviewer.empty()) task.assigned_to = reviewer;
  } else {
    if (task.status != TaskStatus::kInReview) return conflict(task, "reject");
    task.status = TaskStatus::kPending;
    task.record.reset();
    task.assigned_to.reset();
  }
  write_task(task);
  append_event(json{{"type", "review"}, {"action", action}, {"task", to_json(task)}});
  return {200, to_json(task)};
}

Response AnnotationStore::export_accepted() const {
  json records = json::array();
  for (const auto& [id, entry] : entries_) {
    std::lock_guard lock(*entry.mutex);
    const AnnotationTask t = read_task(id);
    if (t.status == TaskStatus::kAccepted && t.record) {
      records.push_back(json::parse(annotation::serialize_annotation(*t.record)));
    }
  }
  return {200, json{{"records", records}}};
}

std::optional<std::string> AnnotationStore::image_png(const std::string& triplet_id,
                                                      const std::string& kind) const {
  const auto it = entries_.find(triplet_id);
  if (it == entries_.end()) return std::nullopt;
  const auto& t = it->second.triplet;
  fs::path path;
  if (kind == "visible") {
    path = t.visible_path;
  } else if (kind == "infrared") {
    path = t.infrared_path;
  } else if (kind == "fused") {
    path = t.fused_path;
  } else {
    return std::nullopt;
  }
  if (path.extension() == ".png") return read_file(path);
  const fs::path tmp = dir_ / (triplet_id + "." + kind + ".png");
  save_image(load_image(path), tmp);
  std::string bytes = read_file(tmp);
  fs::remove(tmp);
  return bytes;
}

std::map<std::string, AnnotationTask> AnnotationStore::snapshot() const {
  std::map<std::string, AnnotationTask> out;
  for (const auto& [id, entry] : entries_) {
    std::lock_guard lock(*entry.mutex);
    out.emplace(id, read_task(id));
  }
  return out;
}

std::map<std::string, AnnotationTask> replay_events(const fs::path& log,
                                                    const data::Manifest& manifest) {
  std::map<std::string, AnnotationTask> state;
  std::map<std::string, annotation::ImageDims> dims;
  for (const auto& t : manifest.triplets) {
    state[t.triplet_id] = AnnotationTask{t.triplet_id, TaskStatus::kPending, std::nullopt,
                                         std::nullopt};
    const Image fused = load_image(t.fused_path);
    dims[t.triplet_id] = {fused.height, fused.width};
  }
  if (!fs::exists(log)) return state;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json event = json::parse(line);
    const json& task = event.at("task");
    const std::string id = task.at("triplet_id").get<std::string>();
    if (!state.contains(id)) throw ValidationError("event for unknown task " + id);
    state[id] = task_from_json(task, dims.at(id));
  }
  return state;
}

namespace {

void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store)
    : store_(store), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  s.Get("/tasks", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> status;
    if (req.has_param("status")) status = req.get_param_value("status");
    reply(res, store_.list(status));
  });
  s.Get(R"(/tasks/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, store_.get(req.matches[1]));
  });
  s.Post(R"(/tasks/([^/]+)/annotation)",
         [this](const httplib::Request& req, httplib::Response& res) {
           reply(res, store_.submit_annotation(req.matches[1], req.body));
         });
  s.Post(R"(/tasks/([^/]+)/review)", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, store_.review(req.matches[1], req.body));
  });
  s.Get(R"(/images/([^/]+)/([^/]+))", [this](const httplib::Request& req,
                                             httplib::Response& res) {
    const auto bytes = store_.image_png(req.matches[1], req.matches[2]);
    if (!bytes) {
      reply(res, {404, json{{"error", "unknown image"}}});
      return;
    }
    res.set_content(*bytes, "image/png");
  });
  s.Get("/export", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, store_.export_accepted());
  });
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res,
                             std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    reply(res, {500, json{{"error", message}}});
  });
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw RuntimeFailure("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw RuntimeFailure("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void AnnotationServer::listen() { server_->listen_after_bind(); }

void AnnotationServer::start() {
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void AnnotationServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace hfusion::service
