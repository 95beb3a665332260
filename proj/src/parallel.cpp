#include "marginlab/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace marginlab {

namespace {

std::size_t env_cap() {
    const char* v = std::getenv("MARGINLAB_THREADS");
    if (v == nullptr) return 0;
    try {
        const long n = std::stol(v);
        return n > 0 ? static_cast<std::size_t>(n) : 0;
    } catch (const std::exception&) {
        return 0;
    }
}

}  // namespace

std::size_t default_jobs() {
    const std::size_t cap = env_cap();
    return cap == 0 ? 1 : cap;
}

std::size_t effective_jobs(std::size_t requested) {
    std::size_t jobs = requested == 0 ? default_jobs() : requested;
    const std::size_t cap = env_cap();
    if (cap != 0 && jobs > cap) jobs = cap;
    return jobs == 0 ? 1 : jobs;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::min(effective_jobs(jobs), n);
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(jobs - 1);
    for (std::size_t t = 1; t < jobs; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace marginlab
