#include "glyphcrm/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace glyphcrm {

namespace {

int resolve_worker_count() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("GLYPHCRM_THREADS")) {
        const int cap = std::atoi(env);
        if (cap >= 1) n = std::min(n, cap);
    }
    return n;
}

thread_local bool tls_inside_worker = false;

// Persistent pool; work is one (body, n) broadcast split into contiguous
// chunks, one per participant. The calling thread takes chunk 0.
class Pool {
public:
    Pool() : workers_(static_cast<std::size_t>(worker_count() > 0 ? worker_count() - 1 : 0)) {
        for (std::size_t i = 0; i < workers_.size(); ++i) {
            workers_[i] = std::thread([this, i] { worker_loop(i + 1); });
        }
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    void run(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
        const int parts = static_cast<int>(workers_.size()) + 1;
        {
            std::lock_guard<std::mutex> lock(mu_);
            body_ = &body;
            n_ = n;
            parts_ = parts;
            pending_ = static_cast<int>(workers_.size());
            ++generation_;
        }
        cv_.notify_all();
        run_chunk(0);
        std::unique_lock<std::mutex> lock(mu_);
        done_cv_.wait(lock, [this] { return pending_ == 0; });
        body_ = nullptr;
    }

private:
    void worker_loop(int part) {
        tls_inside_worker = true;
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::int64_t, std::int64_t)>* body = nullptr;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [&] { return generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                body = body_;
            }
            if (body) run_chunk(part);
            {
                std::lock_guard<std::mutex> lock(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    void run_chunk(int part) {
        const std::int64_t chunk = (n_ + parts_ - 1) / parts_;
        const std::int64_t begin = part * chunk;
        const std::int64_t end = std::min<std::int64_t>(n_, begin + chunk);
        if (begin < end) (*body_)(begin, end);
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::int64_t, std::int64_t)>* body_ = nullptr;
    std::int64_t n_ = 0;
    int parts_ = 1;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

}  // namespace

int worker_count() {
    static const int n = resolve_worker_count();
    return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) return;
    if (worker_count() == 1 || tls_inside_worker || n < 2) {
        body(0, n);
        return;
    }
    static Pool pool;
    pool.run(n, body);
}

}  // namespace glyphcrm
