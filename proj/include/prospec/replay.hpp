#pragma once

#include <mutex>
#include <stdexcept>
#include <vector>

#include "prospec/rng.hpp"
#include "prospec/tensor.hpp"

namespace prospec {

struct Transition {
  std::vector<double> obs;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_obs;
  bool done = false;
};

struct Batch {
  Tensor obs, action, reward, next_obs, done;  // [B, *], reward/done are [B, 1]
  int size() const { return obs.rows(); }
};

// A contiguous K-step slice: the anchor observation plus the K actions taken
// and the K observations that followed, all within one episode.
struct SegmentBatch {
  Tensor obs0;                    // [B, obs]
  std::vector<Tensor> actions;    // K entries of [B, act]
  std::vector<Tensor> next_obs;   // K entries of [B, obs]
  int steps() const { return static_cast<int>(actions.size()); }
  int size() const { return obs0.rows(); }
};

// FIFO ring buffer over transitions. Insertion and sampling may interleave
// from different threads; a mutex serializes access. Sampling is uniform over
// current contents and reproducible given the Rng state.
class ReplayBuffer {
 public:
  ReplayBuffer(int capacity, int obs_dim, int action_dim)
      : capacity_(capacity),
        obs_dim_(obs_dim),
        action_dim_(action_dim),
        obs_(capacity, obs_dim),
        action_(capacity, action_dim),
        reward_(capacity, 1),
        next_obs_(capacity, obs_dim),
        done_(capacity, 1),
        episode_(capacity, 0) {
    if (capacity < 1) throw std::invalid_argument("replay: capacity must be >= 1");
  }

  void add(const Tensor& obs, const Tensor& action, double reward, const Tensor& next_obs, bool done,
           long episode_id) {
    std::lock_guard<std::mutex> lock(mu_);
    obs_.set_row(cursor_, obs);
    action_.set_row(cursor_, action);
    reward_.at(cursor_, 0) = reward;
    next_obs_.set_row(cursor_, next_obs);
    done_.at(cursor_, 0) = done ? 1.0 : 0.0;
    episode_[cursor_] = episode_id;
    cursor_ = (cursor_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
    ++total_added_;
  }

  int size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return size_;
  }

  long total_added() const {
    std::lock_guard<std::mutex> lock(mu_);
    return total_added_;
  }

  Batch sample(int batch_size, Rng& rng) const {
    std::lock_guard<std::mutex> lock(mu_);
    if (size_ == 0) throw std::invalid_argument("replay: cannot sample from an empty buffer");
    Batch b;
    b.obs = Tensor(batch_size, obs_dim_);
    b.action = Tensor(batch_size, action_dim_);
    b.reward = Tensor(batch_size, 1);
    b.next_obs = Tensor(batch_size, obs_dim_);
    b.done = Tensor(batch_size, 1);
    for (int i = 0; i < batch_size; ++i) {
      const int idx = static_cast<int>(rng.next_below(static_cast<uint64_t>(size_)));
      copy_row(obs_, idx, b.obs, i);
      copy_row(action_, idx, b.action, i);
      b.reward.at(i, 0) = reward_.at(idx, 0);
      copy_row(next_obs_, idx, b.next_obs, i);
      b.done.at(i, 0) = done_.at(idx, 0);
    }
    return b;
  }

  // Samples starts of K-step contiguous in-episode slices. Throws if the
  // buffer holds no such slice.
  SegmentBatch sample_segments(int batch_size, int k_steps, Rng& rng) const {
    std::lock_guard<std::mutex> lock(mu_);
    if (k_steps < 1) throw std::invalid_argument("replay: segment length must be >= 1");
    SegmentBatch seg;
    seg.obs0 = Tensor(batch_size, obs_dim_);
    seg.actions.assign(k_steps, Tensor(batch_size, action_dim_));
    seg.next_obs.assign(k_steps, Tensor(batch_size, obs_dim_));
    for (int i = 0; i < batch_size; ++i) {
      int start = -1;
      for (int attempt = 0; attempt < 256; ++attempt) {
        const int cand = static_cast<int>(rng.next_below(static_cast<uint64_t>(size_)));
        if (segment_valid(cand, k_steps)) {
          start = cand;
          break;
        }
      }
      if (start < 0) throw std::runtime_error("replay: no contiguous segment of requested length");
      copy_row(obs_, start, seg.obs0, i);
      for (int k = 0; k < k_steps; ++k) {
        const int idx = (start + k) % capacity_;
        copy_row(action_, idx, seg.actions[k], i);
        copy_row(next_obs_, idx, seg.next_obs[k], i);
      }
    }
    return seg;
  }

  // Test hook: physical row inspection for FIFO checks.
  Tensor row_obs(int physical_index) const {
    std::lock_guard<std::mutex> lock(mu_);
    return obs_.row(physical_index);
  }

  // Raw views for checkpointing (caller holds no lock; snapshot copies).
  struct Snapshot {
    Tensor obs, action, reward, next_obs, done;
    std::vector<long> episode;
    int cursor = 0, size = 0;
    long total_added = 0;
  };

  Snapshot snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return Snapshot{obs_, action_, reward_, next_obs_, done_, episode_, cursor_, size_, total_added_};
  }

  void restore(const Snapshot& s) {
    std::lock_guard<std::mutex> lock(mu_);
    obs_ = s.obs;
    action_ = s.action;
    reward_ = s.reward;
    next_obs_ = s.next_obs;
    done_ = s.done;
    episode_ = s.episode;
    cursor_ = s.cursor;
    size_ = s.size;
    total_added_ = s.total_added;
  }

 private:
  static void copy_row(const Tensor& src, int src_row, Tensor& dst, int dst_row) {
    std::memcpy(dst.data() + static_cast<size_t>(dst_row) * dst.cols(),
                src.data() + static_cast<size_t>(src_row) * src.cols(), sizeof(double) * src.cols());
  }

  // A slice [start, start+k) is usable if every entry is live, stays in one
  // episode, and does not straddle the write cursor.
  bool segment_valid(int start, int k) const {
    if (k > size_) return false;
    if (size_ < capacity_) {
      if (start + k > size_) return false;  // no wrap while filling
    } else {
      const int offset = (start - cursor_ + capacity_) % capacity_;
      if (offset + k > capacity_) return false;  // would straddle the cursor
    }
    const long ep = episode_[start];
    for (int j = 0; j < k; ++j) {
      const int idx = (start + j) % capacity_;
      if (episode_[idx] != ep) return false;
      if (j + 1 < k && done_.at(idx, 0) != 0.0) return false;
    }
    return true;
  }

  const int capacity_, obs_dim_, action_dim_;
  Tensor obs_, action_, reward_, next_obs_, done_;
  std::vector<long> episode_;
  int cursor_ = 0;
  int size_ = 0;
  long total_added_ = 0;
  mutable std::mutex mu_;
};

}  // namespace prospec
