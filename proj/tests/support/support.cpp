#include "support/support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace i2p::testing {

ScratchDir::ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    for (;;) {
        path_ = base / ("i2p-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        if (std::filesystem::create_directories(path_)) {
            break;
        }
    }
}

ScratchDir::~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text;
}

std::vector<double> flatten(const std::vector<ParamBlock>& blocks) {
    std::vector<double> out;
    for (const auto& b : blocks) {
        out.insert(out.end(), b.values.begin(), b.values.end());
    }
    return out;
}

double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw Error("relative_error: size mismatch");
    }
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(na) + std::sqrt(nb);
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

double relative_error(const Vector& a, const Vector& b) {
    return relative_error(std::vector<double>(a.data(), a.data() + a.size()),
                          std::vector<double>(b.data(), b.data() + b.size()));
}

double relative_error(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

std::vector<double> numeric_gradient(std::vector<ParamBlock> params, const std::function<double()>& f, double h) {
    std::vector<double> out;
    for (auto& b : params) {
        for (double& v : b.values) {
            const double saved = v;
            v = saved + h;
            const double up = f();
            v = saved - h;
            const double down = f();
            v = saved;
            out.push_back((up - down) / (2.0 * h));
        }
    }
    return out;
}

Vector random_vector(Eigen::Index n, Rng& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v[i] = u(rng);
    }
    return v;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = u(rng);
    }
    return m;
}

void randomize_blocks(std::vector<ParamBlock> blocks, Rng& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& b : blocks) {
        for (double& v : b.values) {
            v = u(rng);
        }
    }
}

std::string random_word(Rng& rng, int alphabet) {
    std::uniform_int_distribution<int> len(2, 6);
    std::uniform_int_distribution<int> letter(0, alphabet - 1);
    std::string w;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
        w.push_back(static_cast<char>('a' + letter(rng)));
    }
    return w;
}

Poem random_poem(Rng& rng, int lines, int words_max, std::string id, int alphabet) {
    std::uniform_int_distribution<int> words(1, words_max);
    Poem p{std::move(id), {}, PoemSource::unim};
    for (int l = 0; l < lines; ++l) {
        std::string line;
        const int n = words(rng);
        for (int w = 0; w < n; ++w) {
            line += (w ? " " : "") + random_word(rng, alphabet);
        }
        p.lines.push_back(line);
    }
    return p;
}

std::vector<std::string> split_words(const Poem& poem) {
    std::vector<std::string> out;
    for (const auto& line : poem.lines) {
        std::istringstream in(line);
        std::string w;
        while (in >> w) {
            out.push_back(w);
        }
    }
    return out;
}

namespace {

long occurrences(const std::vector<std::string>& seq, const std::vector<std::string>& gram) {
    long c = 0;
    for (std::size_t i = 0; i + gram.size() <= seq.size(); ++i) {
        bool same = true;
        for (std::size_t j = 0; j < gram.size() && same; ++j) {
            same = seq[i + j] == gram[j];
        }
        c += same ? 1 : 0;
    }
    return c;
}

} // namespace

double brute_force_bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, int n) {
    if (candidate.empty() || reference.empty()) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        const std::size_t kk = static_cast<std::size_t>(k);
        if (candidate.size() < kk) {
            return 0.0;
        }
        std::vector<std::vector<std::string>> seen;
        long matched = 0;
        for (std::size_t i = 0; i + kk <= candidate.size(); ++i) {
            const std::vector<std::string> gram(candidate.begin() + static_cast<long>(i),
                                                candidate.begin() + static_cast<long>(i + kk));
            if (std::find(seen.begin(), seen.end(), gram) != seen.end()) {
                continue;
            }
            seen.push_back(gram);
            matched += std::min(occurrences(candidate, gram), occurrences(reference, gram));
        }
        if (matched == 0) {
            return 0.0;
        }
        const double total = static_cast<double>(candidate.size() - kk + 1);
        log_sum += std::log(static_cast<double>(matched) / total);
    }
    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    return std::min(1.0, std::exp(1.0 - r / c)) * std::exp(log_sum / n);
}

} // namespace i2p::testing
