// Copyright 2026 The xdistill Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "xdistill/net.hpp"
#include "xdistill/rng.hpp"

namespace xdistill {

// One buffered interaction. `teacher_q` is populated only during
// distillation collection and holds the acting network's full per-head
// Q-vectors for the stored observation. `source_xapp` indexes the source
// table of the buffer file the transition belongs to (0 when untagged).
struct Transition {
  std::vector<double> observation;
  std::vector<int> action_idx;  // per head of the acting network
  double reward = 0.0;
  std::vector<double> next_observation;
  bool done = false;
  std::vector<std::vector<double>> teacher_q;
  int source_xapp = 0;
};

// Bounded FIFO of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw std::invalid_argument("replay capacity must be >= 1");
  }

  void push(Transition t) {
    if (buf_.size() == capacity_) buf_.pop_front();
    buf_.push_back(std::move(t));
  }

  std::size_t size() const { return buf_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return buf_.at(i); }

  // Uniform sample without replacement within the batch.
  std::vector<const Transition*> sample(std::size_t batch, Rng& rng) const {
    if (batch > buf_.size()) throw std::invalid_argument("batch larger than buffer");
    std::vector<std::size_t> idx(buf_.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<const Transition*> out;
    out.reserve(batch);
    for (std::size_t k = 0; k < batch; ++k) {
      std::size_t pick = k + rng.next_below(idx.size() - k);
      std::swap(idx[k], idx[pick]);
      out.push_back(&buf_[idx[k]]);
    }
    return out;
  }

 private:
  std::deque<Transition> buf_;
  std::size_t capacity_;
};

// Distillation buffer persisted between the collect and distill stages.
// Each source entry names the teacher xApp that generated the transition
// and fixes the head layout its action_idx/teacher_q follow.
struct ExperienceFile {
  struct Source {
    std::string name;
    HeadLayout layout;
  };
  int obs_width = 0;
  std::vector<Source> sources;
  std::vector<Transition> records;
};

namespace detail {

constexpr std::uint32_t kBufMagic = 0x46554258;  // "XBUF"
constexpr std::uint32_t kBufVersion = 1;

}  // namespace detail

// Fixed-width binary records (padded to the widest source layout) behind a
// versioned header; see docs/formats.md.
inline std::string serialize_buffer(const ExperienceFile& f) {
  using namespace detail;
  std::size_t max_heads = 0, max_q = 0;
  for (const auto& s : f.sources) {
    std::size_t q = 0;
    for (const Head& h : s.layout.heads) q += static_cast<std::size_t>(h.width);
    max_heads = std::max(max_heads, s.layout.heads.size());
    max_q = std::max(max_q, q);
  }
  std::string out;
  put(out, kBufMagic);
  put(out, kBufVersion);
  put<std::int32_t>(out, f.obs_width);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(f.sources.size()));
  for (const auto& s : f.sources) {
    put_str(out, s.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.layout.heads.size()));
    for (const Head& h : s.layout.heads) {
      put_str(out, h.name);
      put<std::uint8_t>(out, static_cast<std::uint8_t>(h.role));
      put<std::int32_t>(out, h.slot);
      put<std::int32_t>(out, h.width);
    }
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(max_heads));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(max_q));
  put<std::uint64_t>(out, f.records.size());
  for (const Transition& t : f.records) {
    if (t.source_xapp < 0 || t.source_xapp >= static_cast<int>(f.sources.size())) {
      throw std::invalid_argument("transition source out of range");
    }
    const HeadLayout& layout = f.sources[t.source_xapp].layout;
    if (static_cast<int>(t.observation.size()) != f.obs_width ||
        static_cast<int>(t.next_observation.size()) != f.obs_width ||
        t.action_idx.size() != layout.heads.size() ||
        t.teacher_q.size() != layout.heads.size()) {
      throw std::invalid_argument("transition does not match source layout");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.source_xapp));
    put<std::uint8_t>(out, t.done ? 1 : 0);
    put<double>(out, t.reward);
    for (double v : t.observation) put(out, v);
    for (double v : t.next_observation) put(out, v);
    for (std::size_t h = 0; h < max_heads; ++h) {
      put<std::int32_t>(out, h < t.action_idx.size() ? t.action_idx[h] : 0);
    }
    std::size_t written = 0;
    for (std::size_t h = 0; h < t.teacher_q.size(); ++h) {
      if (static_cast<int>(t.teacher_q[h].size()) != layout.heads[h].width) {
        throw std::invalid_argument("teacher_q width does not match layout");
      }
      for (double v : t.teacher_q[h]) put(out, v);
      written += t.teacher_q[h].size();
    }
    for (; written < max_q; ++written) put<double>(out, 0.0);
  }
  return out;
}

inline ExperienceFile deserialize_buffer(const std::string& bytes,
                                         const std::string& origin = "<memory>") {
  using namespace detail;
  std::size_t at = 0;
  if (take<std::uint32_t>(bytes, at) != kBufMagic) {
    throw std::runtime_error("not an experience buffer: " + origin);
  }
  if (take<std::uint32_t>(bytes, at) != kBufVersion) {
    throw std::runtime_error("unsupported buffer version: " + origin);
  }
  ExperienceFile f;
  f.obs_width = take<std::int32_t>(bytes, at);
  f.sources.resize(take<std::uint32_t>(bytes, at));
  for (auto& s : f.sources) {
    s.name = take_str(bytes, at);
    s.layout.heads.resize(take<std::uint32_t>(bytes, at));
    for (Head& h : s.layout.heads) {
      h.name = take_str(bytes, at);
      h.role = static_cast<HeadRole>(take<std::uint8_t>(bytes, at));
      h.slot = take<std::int32_t>(bytes, at);
      h.width = take<std::int32_t>(bytes, at);
    }
  }
  std::size_t max_heads = take<std::uint32_t>(bytes, at);
  std::size_t max_q = take<std::uint32_t>(bytes, at);
  std::size_t count = take<std::uint64_t>(bytes, at);
  f.records.resize(count);
  for (Transition& t : f.records) {
    t.source_xapp = static_cast<int>(take<std::uint32_t>(bytes, at));
    if (t.source_xapp < 0 || t.source_xapp >= static_cast<int>(f.sources.size())) {
      throw std::runtime_error("corrupt buffer record source: " + origin);
    }
    const HeadLayout& layout = f.sources[t.source_xapp].layout;
    t.done = take<std::uint8_t>(bytes, at) != 0;
    t.reward = take<double>(bytes, at);
    t.observation.resize(f.obs_width);
    for (double& v : t.observation) v = take<double>(bytes, at);
    t.next_observation.resize(f.obs_width);
    for (double& v : t.next_observation) v = take<double>(bytes, at);
    std::vector<int> actions(max_heads);
    for (int& v : actions) v = take<std::int32_t>(bytes, at);
    t.action_idx.assign(actions.begin(), actions.begin() + layout.heads.size());
    t.teacher_q.resize(layout.heads.size());
    std::size_t consumed = 0;
    for (std::size_t h = 0; h < t.teacher_q.size(); ++h) {
      t.teacher_q[h].resize(layout.heads[h].width);
      for (double& v : t.teacher_q[h]) v = take<double>(bytes, at);
      consumed += t.teacher_q[h].size();
    }
    for (; consumed < max_q; ++consumed) take<double>(bytes, at);
  }
  if (at != bytes.size()) throw std::runtime_error("trailing bytes in buffer: " + origin);
  return f;
}

inline void save_buffer(const ExperienceFile& f, const std::string& path) {
  atomic_write(path, serialize_buffer(f));
}

inline ExperienceFile load_buffer(const std::string& path) {
  return deserialize_buffer(read_file(path), path);
}

}  // namespace xdistill
