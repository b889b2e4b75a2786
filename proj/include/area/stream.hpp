#pragma once

// Task streams: ordered tasks with disjoint class sets, and a read-once view
// that enforces the exemplar-free contract.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "area/encoder.hpp"
#include "area/errors.hpp"

namespace area {

struct TaskData {
  std::uint32_t task_id = 0;
  std::vector<std::uint32_t> classes;  // ascending
  std::vector<RawSample> samples;

  bool operator==(const TaskData&) const = default;
};

struct TaskStream {
  std::vector<TaskData> tasks;

  bool operator==(const TaskStream&) const = default;

  std::size_t size() const noexcept { return tasks.size(); }

  std::size_t num_samples() const {
    std::size_t n = 0;
    for (const auto& t : tasks) n += t.samples.size();
    return n;
  }

  // "B-m Inc-n": m classes in the first task, n in each later one (the
  // last task size when they differ).
  std::string split_descriptor() const {
    if (tasks.empty()) return "B-0 Inc-0";
    return "B-" + std::to_string(tasks.front().classes.size()) + " Inc-" + std::to_string(tasks.back().classes.size());
  }

  // Tasks in ascending id order, classes gathered from the sample labels.
  static TaskStream from_samples(const std::vector<RawSample>& samples) {
    std::map<std::uint32_t, TaskData> by_task;
    for (const auto& s : samples) {
      auto& t = by_task[s.task];
      t.task_id = s.task;
      t.samples.push_back(s);
      if (std::find(t.classes.begin(), t.classes.end(), s.label) == t.classes.end()) t.classes.push_back(s.label);
    }
    TaskStream out;
    for (auto& [_, t] : by_task) {
      std::sort(t.classes.begin(), t.classes.end());
      out.tasks.push_back(std::move(t));
    }
    out.validate();
    return out;
  }

  std::vector<RawSample> flatten() const {
    std::vector<RawSample> out;
    for (const auto& t : tasks) out.insert(out.end(), t.samples.begin(), t.samples.end());
    return out;
  }

  void validate() const {
    std::map<std::uint32_t, std::uint32_t> owner;
    std::set<std::uint32_t> ids;
    for (const auto& t : tasks) {
      if (!ids.insert(t.task_id).second) throw DataError("task " + std::to_string(t.task_id) + " appears twice");
      for (auto c : t.classes) {
        if (auto [it, fresh] = owner.emplace(c, t.task_id); !fresh) {
          throw DataError("class " + std::to_string(c) + " appears in tasks " + std::to_string(it->second) + " and " +
                          std::to_string(t.task_id));
        }
      }
      for (const auto& s : t.samples) {
        if (s.task != t.task_id) throw DataError("sample task id does not match its task");
        if (!std::binary_search(t.classes.begin(), t.classes.end(), s.label)) {
          throw DataError("sample label " + std::to_string(s.label) + " is not a class of task " +
                          std::to_string(t.task_id));
        }
      }
    }
  }
};

// Stage-wise access to training data. After release(b) the data of stage b
// is gone for good.
class StreamSource {
 public:
  virtual ~StreamSource() = default;
  virtual std::size_t num_tasks() const = 0;
  virtual const TaskData& task(std::size_t stage) = 0;
  virtual void release(std::size_t stage) = 0;
};

class LockedStream : public StreamSource {
 public:
  explicit LockedStream(const TaskStream& stream) : stream_(stream), released_(stream.size(), false) {}

  std::size_t num_tasks() const override { return stream_.size(); }

  const TaskData& task(std::size_t stage) override {
    if (stage >= stream_.size()) throw DomainError("stream has no stage " + std::to_string(stage));
    if (released_[stage]) {
      throw ExemplarViolation("training data of stage " + std::to_string(stage) + " was read after its stage closed");
    }
    return stream_.tasks[stage];
  }

  void release(std::size_t stage) override { released_.at(stage) = true; }

 private:
  const TaskStream& stream_;
  std::vector<bool> released_;
};

}  // namespace area
