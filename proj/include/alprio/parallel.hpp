#pragma once

#include <exception>
#include <mutex>

namespace alprio {

// Exceptions must not leave an OpenMP region; loop bodies park the first one
// here and the caller rethrows it after the region.
class ExceptionSlot {
public:
    void capture() {
        const std::lock_guard<std::mutex> lock(mutex_);
        if (!error_) error_ = std::current_exception();
    }
    void rethrow() const {
        if (error_) std::rethrow_exception(error_);
    }

private:
    std::mutex mutex_;
    std::exception_ptr error_;
};

}  // namespace alprio
