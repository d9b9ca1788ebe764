#pragma once

#include <functional>
#include <string>
#include <vector>

namespace acceptance {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    std::function<Outcome()> run;
    double time_limit = 0;  // seconds; 0 when unbounded
};

// Registered by each criterion file through a static Register object.
std::vector<Criterion>& registry();

struct Register {
    Register(int id, std::string name, std::function<Outcome()> run, double time_limit = 0) {
        registry().push_back({id, std::move(name), std::move(run), time_limit});
    }
};

// Scratch directory under the system temp dir, removed on destruction.
class Scratch {
   public:
    explicit Scratch(const std::string& tag);
    ~Scratch();
    Scratch(const Scratch&) = delete;
    Scratch& operator=(const Scratch&) = delete;
    const std::string& path() const { return path_; }

   private:
    std::string path_;
};

std::string fmt(double v, int precision = 4);

}  // namespace acceptance
