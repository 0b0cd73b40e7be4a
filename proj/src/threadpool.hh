// threadpool.hh
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

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dub {

// Persistent worker pool used only for data-parallel row partitions.
// parallel_for assigns each index range to exactly one worker and every
// worker runs the same serial inner loop, so the numerical result is
// bit-identical to a single-threaded run regardless of the thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int threads() const { return n_threads_; }

  void set_threads(int n) {
    if (n < 1) n = 1;
    std::unique_lock<std::mutex> lk(mu_);
    if (n == n_threads_) return;
    stop_workers(lk);
    n_threads_ = n;
    start_workers(lk);
  }

  // Runs body(begin, end) over a fixed partition of [0, n). The calling
  // thread participates, so a pool of size 1 never context-switches.
  void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    if (n_threads_ <= 1 || n < 2) {
      body(0, n);
      return;
    }
    uint64_t id;
    {
      std::unique_lock<std::mutex> lk(mu_);
      job_body_ = &body;
      job_n_ = n;
      job_chunks_ = static_cast<int>(std::min<int64_t>(n_threads_, n));
      job_next_ = 0;
      job_done_ = 0;
      id = ++job_id_;
      cv_work_.notify_all();
    }
    run_chunks(id);
    std::unique_lock<std::mutex> lk(mu_);
    cv_done_.wait(lk, [&] { return job_done_ >= job_chunks_; });
    job_body_ = nullptr;
  }

  ~ThreadPool() {
    std::unique_lock<std::mutex> lk(mu_);
    stop_workers(lk);
  }

 private:
  ThreadPool() : n_threads_(1) {}

  void run_chunks(uint64_t id) {
    for (;;) {
      const std::function<void(int64_t, int64_t)>* body = nullptr;
      int64_t n = 0;
      int c = 0;
      int chunks = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (job_id_ != id || job_next_ >= job_chunks_) return;
        c = job_next_++;
        body = job_body_;
        n = job_n_;
        chunks = job_chunks_;
      }
      int64_t begin = n * c / chunks;
      int64_t end = n * (c + 1) / chunks;
      if (begin < end) (*body)(begin, end);
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (job_id_ == id && ++job_done_ >= job_chunks_) cv_done_.notify_all();
      }
    }
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      uint64_t id;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_work_.wait(lk, [&] { return stopping_ || (job_body_ && job_id_ != seen); });
        if (stopping_) return;
        seen = job_id_;
        id = job_id_;
      }
      run_chunks(id);
    }
  }

  void start_workers(std::unique_lock<std::mutex>&) {
    stopping_ = false;
    for (int i = 1; i < n_threads_; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void stop_workers(std::unique_lock<std::mutex>& lk) {
    stopping_ = true;
    cv_work_.notify_all();
    lk.unlock();
    for (auto& t : workers_) t.join();
    workers_.clear();
    lk.lock();
    stopping_ = false;
  }

  std::mutex mu_;
  std::condition_variable cv_work_;
  std::condition_variable cv_done_;
  std::vector<std::thread> workers_;
  int n_threads_;
  bool stopping_ = false;

  const std::function<void(int64_t, int64_t)>* job_body_ = nullptr;
  int64_t job_n_ = 0;
  int job_chunks_ = 0;
  int job_next_ = 0;
  int job_done_ = 0;
  uint64_t job_id_ = 0;
};

}  // namespace dub
