#include "pafm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string_view>

#include "pafm/errors.hpp"

namespace pafm {

Family parse_family(const std::string& name) {
    if (name == "two_moons") return Family::TwoMoons;
    if (name == "gaussian_mixture") return Family::GaussianMixture;
    throw ConfigError("unknown dataset family '" + name + "' (expected two_moons or gaussian_mixture)");
}

std::string to_string(Family family) {
    return family == Family::TwoMoons ? "two_moons" : "gaussian_mixture";
}

void SyntheticSpec::validate() const {
    if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1");
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
    if (!(source_std > 0.0)) throw ConfigError("source_std must be > 0");
    if (family == Family::TwoMoons && source_mean.size() != 2)
        throw ConfigError("two_moons needs a 2-dimensional source mean");
    if (family == Family::GaussianMixture) {
        if (centers.empty()) throw ConfigError("gaussian_mixture needs at least one centre");
        for (const auto& c : centers)
            if (c.size() != source_mean.size())
                throw ConfigError("mixture centre dimension differs from the source mean");
    }
}

Dataset gen_two_moons(std::size_t n_per_class, double noise_std, SeededRng& rng) {
    if (n_per_class < 1) throw InvalidArgument("gen_two_moons: n_per_class must be >= 1");
    if (!(noise_std >= 0.0)) throw InvalidArgument("gen_two_moons: noise_std must be >= 0");
    Dataset ds;
    ds.points.resize(2, static_cast<Eigen::Index>(2 * n_per_class));
    ds.labels.resize(2 * n_per_class);
    std::size_t col = 0;
    for (Label moon = 0; moon < 2; ++moon) {
        for (std::size_t k = 0; k < n_per_class; ++k, ++col) {
            const double a = std::numbers::pi * rng.uniform();
            double x = moon == 0 ? std::cos(a) : 1.0 - std::cos(a);
            double y = moon == 0 ? std::sin(a) : 0.5 - std::sin(a);
            if (noise_std > 0.0) {
                x += noise_std * rng.normal();
                y += noise_std * rng.normal();
            }
            ds.points(0, static_cast<Eigen::Index>(col)) = x;
            ds.points(1, static_cast<Eigen::Index>(col)) = y;
            ds.labels[col] = moon;
        }
    }
    return ds;
}

Dataset gen_gaussian_mixture(const std::vector<Point>& centers, const std::vector<double>& stds,
                             std::size_t n_per_center, SeededRng& rng) {
    if (centers.empty() || centers.size() != stds.size())
        throw InvalidArgument("gen_gaussian_mixture: centers and stds must be non-empty and conformant");
    const Eigen::Index d = centers.front().size();
    Dataset ds;
    ds.points.resize(d, static_cast<Eigen::Index>(centers.size() * n_per_center));
    std::size_t col = 0;
    for (std::size_t c = 0; c < centers.size(); ++c) {
        if (centers[c].size() != d) throw InvalidArgument("gen_gaussian_mixture: centre dimensions differ");
        for (std::size_t k = 0; k < n_per_center; ++k, ++col) {
            ds.points.col(static_cast<Eigen::Index>(col)) = gaussian_sample(rng, d, centers[c], stds[c]);
            ds.labels.push_back(static_cast<Label>(c));
        }
    }
    return ds;
}

Dataset generate(const SyntheticSpec& spec) {
    spec.validate();
    SeededRng rng = SeededRng::derive(spec.seed, "dataset");
    if (spec.family == Family::TwoMoons) return gen_two_moons(spec.n_per_class, spec.noise_std, rng);
    std::vector<double> stds(spec.centers.size(), spec.noise_std);
    return gen_gaussian_mixture(spec.centers, stds, spec.n_per_class, rng);
}

Dataset subsample(const Dataset& dataset, std::size_t n_total, SeededRng& rng) {
    if (n_total > dataset.size())
        throw InvalidArgument("subsample: requested " + std::to_string(n_total) + " of " +
                              std::to_string(dataset.size()) + " points");
    const auto classes = dataset.label_set();
    std::vector<std::vector<std::size_t>> members;
    for (Label y : classes) members.push_back(dataset.indices_with_label(y));

    // Balanced quotas; classes too small for their share hand the rest on.
    std::vector<std::size_t> quota(classes.size(), 0);
    std::size_t remaining = n_total;
    while (remaining > 0) {
        std::size_t open = 0;
        for (std::size_t c = 0; c < classes.size(); ++c)
            if (quota[c] < members[c].size()) ++open;
        const std::size_t share = std::max<std::size_t>(1, remaining / open);
        for (std::size_t c = 0; c < classes.size() && remaining > 0; ++c) {
            const std::size_t take = std::min({share, members[c].size() - quota[c], remaining});
            quota[c] += take;
            remaining -= take;
        }
    }

    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        auto& pool = members[c];
        // Partial Fisher-Yates.
        for (std::size_t k = 0; k < quota[c]; ++k) {
            const std::size_t pick = k + rng.uniform_index(pool.size() - k);
            std::swap(pool[k], pool[pick]);
        }
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    std::sort(chosen.begin(), chosen.end());

    Dataset out;
    out.points.resize(dataset.dim(), static_cast<Eigen::Index>(chosen.size()));
    for (std::size_t k = 0; k < chosen.size(); ++k) {
        out.points.col(static_cast<Eigen::Index>(k)) = dataset.point(chosen[k]);
        out.labels.push_back(dataset.label(chosen[k]));
    }
    return out;
}

KnnTable precompute_knn(const Dataset& dataset, std::size_t k, bool by_class) {
    if (k < 1) throw InvalidArgument("precompute_knn: K must be >= 1");
    KnnTable table;
    table.by_class = by_class;
    table.rows.resize(dataset.size());

    std::map<Label, std::vector<std::size_t>> groups;
    if (by_class) {
        for (Label y : dataset.label_set()) groups[y] = dataset.indices_with_label(y);
    } else {
        groups[kUnconditional] = dataset.indices_with_label(kUnconditional);
    }
    for (const auto& [label, members] : groups)
        if (k > members.size())
            throw InvalidArgument("precompute_knn: K = " + std::to_string(k) + " exceeds class size " +
                                  std::to_string(members.size()));

    std::vector<std::pair<double, std::size_t>> scratch;
    for (const auto& [label, members] : groups) {
        for (std::size_t i : members) {
            scratch.clear();
            for (std::size_t j : members)
                if (j != i) scratch.emplace_back((dataset.point(j) - dataset.point(i)).squaredNorm(), j);
            const auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(k - 1);
            std::partial_sort(scratch.begin(), mid, scratch.end());
            auto& row = table.rows[i];
            row.reserve(k);
            row.push_back(static_cast<std::uint32_t>(i));
            for (auto it = scratch.begin(); it != mid; ++it) row.push_back(static_cast<std::uint32_t>(it->second));
        }
    }
    return table;
}

std::string format_double(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

double parse_real(std::string_view text, std::size_t line) {
    text = trim(text);
    double value = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw ParseError(line, "malformed number '" + std::string(text) + "'");
    if (!std::isfinite(value)) throw ParseError(line, "non-finite number");
    return value;
}

template <typename Int>
Int parse_int(std::string_view text, std::size_t line) {
    text = trim(text);
    Int value{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw ParseError(line, "malformed integer '" + std::string(text) + "'");
    return value;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& dataset) {
    dataset.validate();
    out << dataset.dim() << ',' << dataset.size() << ',';
    const auto labels = dataset.label_set();
    for (std::size_t k = 0; k < labels.size(); ++k) out << (k ? ";" : "") << labels[k];
    out << '\n';
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        for (Eigen::Index c = 0; c < dataset.dim(); ++c) out << format_double(dataset.point(i)[c]) << ',';
        out << dataset.label(i) << '\n';
    }
}

Dataset read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "empty dataset file (missing header)");
    const auto header = split(trim(line), ',');
    if (header.size() != 3) throw ParseError(1, "header must be 'd,n,labels'");
    const auto d = parse_int<long>(header[0], 1);
    const auto n = parse_int<long>(header[1], 1);
    if (d < 1 || n < 0) throw ParseError(1, "invalid dimension or count");
    std::vector<Label> declared;
    if (!trim(header[2]).empty())
        for (auto tok : split(trim(header[2]), ';')) declared.push_back(parse_int<Label>(tok, 1));

    Dataset ds;
    ds.points.resize(d, n);
    ds.labels.reserve(static_cast<std::size_t>(n));
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split(trim(line), ',');
        if (fields.size() != static_cast<std::size_t>(d) + 1)
            throw ParseError(lineno, "expected " + std::to_string(d + 1) + " fields, found " +
                                         std::to_string(fields.size()));
        const auto row = static_cast<long>(ds.labels.size());
        if (row >= n) throw ParseError(lineno, "more rows than the header declares");
        for (long c = 0; c < d; ++c) ds.points(c, row) = parse_real(fields[static_cast<std::size_t>(c)], lineno);
        const Label y = parse_int<Label>(fields.back(), lineno);
        if (std::find(declared.begin(), declared.end(), y) == declared.end())
            throw ParseError(lineno, "label " + std::to_string(y) + " not in the declared label set");
        ds.labels.push_back(y);
    }
    if (static_cast<long>(ds.labels.size()) != n)
        throw ParseError(lineno, "header declares " + std::to_string(n) + " rows, found " +
                                     std::to_string(ds.labels.size()));
    return ds;
}

void write_candidates(std::ostream& out, const KnnTable& table) {
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        out << i << ": ";
        const auto& row = table.rows[i];
        for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
        out << '\n';
    }
}

KnnTable read_candidates(std::istream& in) {
    KnnTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto text = trim(line);
        if (text.empty()) continue;
        const auto colon = text.find(':');
        if (colon == std::string_view::npos) throw ParseError(lineno, "expected 'owner: j1,...,jK'");
        const auto owner = parse_int<std::size_t>(text.substr(0, colon), lineno);
        if (owner != table.rows.size())
            throw ParseError(lineno, "owner " + std::to_string(owner) + " out of sequence");
        std::vector<std::uint32_t> row;
        for (auto tok : split(text.substr(colon + 1), ',')) row.push_back(parse_int<std::uint32_t>(tok, lineno));
        if (row.empty()) throw ParseError(lineno, "empty candidate list");
        if (std::find(row.begin(), row.end(), owner) == row.end())
            throw ParseError(lineno, "candidate list does not contain its owner");
        table.rows.push_back(std::move(row));
    }
    if (table.rows.empty()) throw ParseError(lineno, "empty candidates file");
    return table;
}

void write_samples(std::ostream& out, const Matrix& samples) {
    for (Eigen::Index i = 0; i < samples.cols(); ++i) {
        for (Eigen::Index c = 0; c < samples.rows(); ++c)
            out << (c ? "," : "") << format_double(samples(c, i));
        out << '\n';
    }
}

Matrix read_samples(std::istream& in) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<double> row;
        for (auto tok : split(trim(line), ',')) row.push_back(parse_real(tok, lineno));
        if (!rows.empty() && row.size() != rows.front().size())
            throw ParseError(lineno, "inconsistent sample dimension");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError(lineno, "empty samples file");
    Matrix out(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < rows[i].size(); ++c)
            out(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) = rows[i][c];
    return out;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    auto out = open_out(path);
    write_dataset(out, dataset);
}

Dataset read_dataset(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_dataset(in);
}

void write_candidates(const std::filesystem::path& path, const KnnTable& table) {
    auto out = open_out(path);
    write_candidates(out, table);
}

KnnTable read_candidates(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_candidates(in);
}

void write_samples(const std::filesystem::path& path, const Matrix& samples) {
    auto out = open_out(path);
    write_samples(out, samples);
}

Matrix read_samples(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_samples(in);
}

}  // namespace pafm
