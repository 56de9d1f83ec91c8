#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "hfusion/annotation.h"
#include "hfusion/data_pipeline.h"

namespace httplib {
class Server;
}

namespace hfusion::service {

enum class TaskStatus { kPending, kAutoAnnotated, kInReview, kAccepted };

std::string to_string(TaskStatus s);
TaskStatus status_from_string(const std::string& s);

struct AnnotationTask {
  std::string triplet_id;
  TaskStatus status = TaskStatus::kPending;
  std::optional<std::string> assigned_to;
  std::optional<annotation::AnnotationRecord> record;

  bool operator==(const AnnotationTask&) const = default;
};

nlohmann::ordered_json to_json(const AnnotationTask& task);
AnnotationTask task_from_json(const nlohmann::ordered_json& j, annotation::ImageDims dims);

struct Response {
  int status = 200;
  nlohmann::ordered_json body;
};

// One JSON file per task under DIR/tasks plus an append-only DIR/events.jsonl.
// Writes go to a temp file and are renamed into place while the task's mutex
// is held, after re-checking the status on disk.
class AnnotationStore {
 public:
  AnnotationStore(std::filesystem::path dir, const data::Manifest& manifest);

  [[nodiscard]] Response list(const std::optional<std::string>& status) const;
  [[nodiscard]] Response get(const std::string& triplet_id) const;
  // Body is an annotation document plus optional "auto_annotated" (default
  // true): true -> auto_annotated, false -> in_review. Task must be pending.
  Response submit_annotation(const std::string& triplet_id, const std::string& body);
  // Body {"action": "claim"|"accept"|"reject", "reviewer": str, "record": doc?}.
  // claim: auto_annotated -> in_review. accept: auto_annotated|in_review ->
  // accepted, optionally replacing the record. reject: in_review -> pending.
  Response review(const std::string& triplet_id, const std::string& body);
  [[nodiscard]] Response export_accepted() const;

  // Image bytes for GET /images; empty when the triplet or kind is unknown.
  [[nodiscard]] std::optional<std::string> image_png(const std::string& triplet_id,
                                                     const std::string& kind) const;

  [[nodiscard]] std::map<std::string, AnnotationTask> snapshot() const;
  [[nodiscard]] const std::filesystem::path& event_log() const { return events_path_; }
  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

 private:
  struct Entry {
    data::ImageTriplet triplet;
    annotation::ImageDims dims;
    std::unique_ptr<std::mutex> mutex;
  };

  [[nodiscard]] std::filesystem::path task_path(const std::string& id) const;
  [[nodiscard]] AnnotationTask read_task(const std::string& id) const;
  void write_task(const AnnotationTask& task) const;
  void append_event(nlohmann::ordered_json event);

  std::filesystem::path dir_;
  std::filesystem::path events_path_;
  std::map<std::string, Entry> entries_;
  std::mutex log_mutex_;
  long next_seq_ = 0;
};

// Folds the event log over an all-pending initial state.
std::map<std::string, AnnotationTask> replay_events(const std::filesystem::path& log,
                                                    const data::Manifest& manifest);

// HTTP front end. bind(port 0) picks a free port.
class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationStore& store);
  ~AnnotationServer();

  int bind(const std::string& host, int port);
  void listen();  // blocks
  void start();   // listens on a background thread
  void stop();

 private:
  AnnotationStore& store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace hfusion::service
