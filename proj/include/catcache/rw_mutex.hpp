#pragma once

#include <pthread.h>

#include <cerrno>
#include <system_error>

namespace catcache {

/// Reader/writer lock that lets a waiting writer in ahead of new readers.
/// std::shared_mutex on glibc prefers readers, so a steady stream of
/// searches can starve inserts indefinitely. Meets the SharedMutex
/// requirements, so std::shared_lock / std::unique_lock work as usual.
class RwMutex {
public:
    RwMutex() {
        pthread_rwlockattr_t attr;
        pthread_rwlockattr_init(&attr);
#if defined(__GLIBC__)
        pthread_rwlockattr_setkind_np(&attr, PTHREAD_RWLOCK_PREFER_WRITER_NONRECURSIVE_NP);
#endif
        const int rc = pthread_rwlock_init(&lock_, &attr);
        pthread_rwlockattr_destroy(&attr);
        if (rc != 0) throw std::system_error(rc, std::generic_category(), "pthread_rwlock_init");
    }
    ~RwMutex() { pthread_rwlock_destroy(&lock_); }
    RwMutex(const RwMutex&) = delete;
    RwMutex& operator=(const RwMutex&) = delete;

    void lock() { check(pthread_rwlock_wrlock(&lock_), "pthread_rwlock_wrlock"); }
    bool try_lock() { return pthread_rwlock_trywrlock(&lock_) == 0; }
    void unlock() { pthread_rwlock_unlock(&lock_); }

    void lock_shared() {
        int rc;
        while ((rc = pthread_rwlock_rdlock(&lock_)) == EAGAIN) {
        }
        check(rc, "pthread_rwlock_rdlock");
    }
    bool try_lock_shared() { return pthread_rwlock_tryrdlock(&lock_) == 0; }
    void unlock_shared() { pthread_rwlock_unlock(&lock_); }

private:
    static void check(int rc, const char* what) {
        if (rc != 0) throw std::system_error(rc, std::generic_category(), what);
    }

    pthread_rwlock_t lock_;
};

}  // namespace catcache
