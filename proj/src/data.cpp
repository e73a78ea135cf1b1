#include "osteo/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "osteo/backbone.hpp"

namespace osteo {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

constexpr std::array<Split, 3> kSplits{Split::train, Split::test, Split::val};

}  // namespace

std::string to_string(Split split) {
    switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::val: return "val";
    default: return "";
    }
}

Split parse_split(const std::string& text) {
    if (text.empty()) return Split::unassigned;
    if (text == "train") return Split::train;
    if (text == "test") return Split::test;
    if (text == "val" || text == "validation") return Split::val;
    throw DataError("unknown split '" + text + "'");
}

std::size_t DatasetManifest::count(Split split, int grade) const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const GradeRecord& r) {
        return r.split == split && r.kl_grade == grade;
    }));
}

std::size_t DatasetManifest::split_size(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const GradeRecord& r) { return r.split == split; }));
}

std::size_t DatasetManifest::grade_total(int grade) const {
    return static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [&](const GradeRecord& r) { return r.kl_grade == grade; }));
}

std::vector<std::size_t> DatasetManifest::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == split) out.push_back(i);
    }
    return out;
}

std::filesystem::path DatasetManifest::resolve(const GradeRecord& record) const {
    std::filesystem::path p(record.path);
    return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest parse_manifest(std::istream& is, const std::string& source) {
    DatasetManifest m;
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> column;
    bool header_seen = false;
    std::map<std::string, std::size_t> seen_paths;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (!header_seen) {
            for (std::size_t i = 0; i < cells.size(); ++i) column[trim(cells[i])] = i;
            if (!column.count("path") || !column.count("kl_grade")) {
                throw DataError(source + ":" + std::to_string(lineno) + ": header must contain path and kl_grade");
            }
            header_seen = true;
            continue;
        }
        if (cells.size() != column.size()) {
            throw DataError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(column.size()) +
                            " fields, got " + std::to_string(cells.size()));
        }
        auto field = [&](const char* name) -> std::string {
            auto it = column.find(name);
            return it == column.end() ? std::string() : trim(cells[it->second]);
        };
        GradeRecord r;
        r.path = field("path");
        if (r.path.empty()) throw DataError(source + ":" + std::to_string(lineno) + ": empty path");
        const std::string grade = field("kl_grade");
        if (grade.size() != 1 || grade[0] < '0' || grade[0] > '9') {
            throw DataError(source + ":" + std::to_string(lineno) + ": kl_grade '" + grade + "' is not an integer 0..4");
        }
        r.kl_grade = grade[0] - '0';
        if (r.kl_grade >= kNumGrades) {
            throw DataError(source + ":" + std::to_string(lineno) + ": kl_grade " + grade + " out of range 0..4");
        }
        try {
            r.split = parse_split(field("split"));
        } catch (const DataError& e) {
            throw DataError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
        const std::string lat = field("laterality");
        if (lat == "left" || lat == "L") r.laterality = Laterality::left;
        else if (lat == "right" || lat == "R") r.laterality = Laterality::right;
        else if (!lat.empty()) throw DataError(source + ":" + std::to_string(lineno) + ": unknown laterality '" + lat + "'");
        r.patient_id = field("patient_id");
        auto [it, inserted] = seen_paths.emplace(r.path, lineno);
        if (!inserted) {
            throw DataError(source + ":" + std::to_string(lineno) + ": duplicate path '" + r.path + "' (first on line " +
                            std::to_string(it->second) + ")");
        }
        m.records.push_back(std::move(r));
    }
    if (m.records.empty()) throw DataError(source + ": empty manifest");
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    auto m = parse_manifest(in, path.string());
    m.base_dir = path.parent_path();
    return m;
}

void write_manifest(const DatasetManifest& manifest, std::ostream& os) {
    const bool has_split = std::any_of(manifest.records.begin(), manifest.records.end(),
                                       [](const GradeRecord& r) { return r.split != Split::unassigned; });
    const bool has_lat = std::any_of(manifest.records.begin(), manifest.records.end(),
                                     [](const GradeRecord& r) { return r.laterality.has_value(); });
    const bool has_patient = std::any_of(manifest.records.begin(), manifest.records.end(),
                                         [](const GradeRecord& r) { return !r.patient_id.empty(); });
    os << "path,kl_grade";
    if (has_split) os << ",split";
    if (has_lat) os << ",laterality";
    if (has_patient) os << ",patient_id";
    os << '\n';
    for (const auto& r : manifest.records) {
        os << r.path << ',' << r.kl_grade;
        if (has_split) os << ',' << to_string(r.split);
        if (has_lat) os << ',' << (r.laterality ? (*r.laterality == Laterality::left ? "left" : "right") : "");
        if (has_patient) os << ',' << r.patient_id;
        os << '\n';
    }
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write manifest " + path.string());
    write_manifest(manifest, out);
}

SplitRatios SplitRatios::parse(const std::string& text) {
    std::stringstream ss(text);
    std::string item;
    std::vector<double> parts;
    while (std::getline(ss, item, ':')) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || *end != '\0' || !(v >= 0.0) || !std::isfinite(v)) {
            throw ConfigError("bad split ratio '" + text + "'");
        }
        parts.push_back(v);
    }
    if (parts.size() != 3 || parts[0] + parts[1] + parts[2] <= 0.0) {
        throw ConfigError("split ratios need three non-negative parts train:test:val, got '" + text + "'");
    }
    return {parts[0], parts[1], parts[2]};
}

std::array<std::size_t, 3> allocate_split(std::size_t n, const SplitRatios& ratios) {
    const std::array<double, 3> r{ratios.train, ratios.test, ratios.val};
    const double total = r[0] + r[1] + r[2];
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * r[i] / total;
        counts[i] = static_cast<std::size_t>(std::floor(exact));
        frac[i] = exact - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
    return counts;
}

void shuffle_indices(std::vector<std::size_t>& indices, std::mt19937_64& rng) {
    for (std::size_t i = indices.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(indices[i - 1], indices[j]);
    }
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

SplitResult stratified_split(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed,
                             const SplitOptions& options) {
    SplitResult result{manifest, {}};
    // Units are single records, or patients when grouping. A patient's grade
    // for stratification is the worst grade among its records.
    struct Unit {
        std::string key;
        int grade = 0;
        std::vector<std::size_t> members;
    };
    std::map<std::string, Unit> units;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const auto& r = manifest.records[i];
        std::string key = "path:" + r.path;
        if (options.group_by_patient && !r.patient_id.empty()) key = "patient:" + r.patient_id;
        auto& u = units[key];
        u.key = key;
        u.grade = std::max(u.grade, r.kl_grade);
        u.members.push_back(i);
    }
    std::array<std::vector<const Unit*>, kNumGrades> by_grade;
    for (const auto& [key, u] : units) by_grade[static_cast<std::size_t>(u.grade)].push_back(&u);

    for (int g = 0; g < kNumGrades; ++g) {
        auto& group = by_grade[static_cast<std::size_t>(g)];
        if (group.empty()) {
            const std::string msg = "grade " + std::to_string(g) + " has no records; stratification incomplete";
            if (options.strict) throw DataError(msg);
            result.warnings.push_back(msg);
            continue;
        }
        std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(g + 1)));
        std::vector<std::size_t> order(group.size());
        std::iota(order.begin(), order.end(), 0);
        shuffle_indices(order, rng);
        const auto counts = allocate_split(group.size(), ratios);
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            for (std::size_t k = 0; k < counts[static_cast<std::size_t>(s)]; ++k, ++pos) {
                for (auto idx : group[order[pos]]->members) result.manifest.records[idx].split = kSplits[static_cast<std::size_t>(s)];
            }
        }
    }
    return result;
}

cv::Mat read_grayscale(const std::filesystem::path& path) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
    if (raw.empty()) throw DataError("cannot decode image " + path.string());
    if (raw.channels() == 3) cv::cvtColor(raw, raw, cv::COLOR_BGR2GRAY);
    else if (raw.channels() == 4) cv::cvtColor(raw, raw, cv::COLOR_BGRA2GRAY);
    else if (raw.channels() != 1) throw DataError("unsupported channel count in " + path.string());
    double scale = 0.0;
    switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw DataError("image " + path.string() + " is neither 8- nor 16-bit");
    }
    cv::Mat out;
    raw.convertTo(out, CV_64F, scale);
    return out;
}

void write_image(const std::filesystem::path& path, const cv::Mat& image) {
    if (image.empty()) throw DataError("refusing to write an empty image to " + path.string());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), image);
    } catch (const cv::Exception& e) {
        throw DataError("cannot write image " + path.string() + ": " + e.what());
    }
    if (!ok) throw DataError("cannot write image " + path.string());
}

Tensor<float> normalize_image(const cv::Mat& gray, int size, int channels) {
    if (gray.empty()) throw DataError("empty image");
    if (size < 1 || channels < 1) throw ConfigError("image size and channel count must be positive");
    cv::Mat src;
    gray.convertTo(src, CV_64F);
    cv::Mat resized;
    if (src.rows == size && src.cols == size) resized = src;
    else cv::resize(src, resized, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
    double mean = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) mean += resized.at<double>(y, x);
    const double n = static_cast<double>(size) * size;
    mean /= n;
    double lo = 0.0, hi = 0.0;
    cv::minMaxLoc(resized, &lo, &hi);
    if (lo == hi) mean = lo;
    double var = 0.0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double d = resized.at<double>(y, x) - mean;
            var += d * d;
        }
    var /= n;
    const double inv = 1.0 / std::sqrt(std::max(var, 1e-6));
    const auto S = static_cast<std::size_t>(size);
    Tensor<float> out(Shape{static_cast<std::size_t>(channels), S, S});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const auto v = static_cast<float>((resized.at<double>(y, x) - mean) * inv);
            for (int c = 0; c < channels; ++c) out[(static_cast<std::size_t>(c) * S + y) * S + x] = v;
        }
    return out;
}

Tensor<float> load_image(const std::filesystem::path& path, int size, int channels) {
    return normalize_image(read_grayscale(path), size, channels);
}

void AugmentationPolicy::validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(flip_probability)) throw ConfigError("flip probability must lie in [0,1]");
    if (!(rotation_degrees >= 0.0 && rotation_degrees <= 15.0)) {
        throw ConfigError("rotation range must lie within ±15 degrees");
    }
    if (!in01(brightness) || !in01(contrast)) throw ConfigError("brightness/contrast jitter must lie in [0,1]");
}

Tensor<float> flip_horizontal(const Tensor<float>& image) {
    if (image.rank() != 3) throw DimensionError("flip_horizontal: expected C×H×W");
    const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor<float> out(image.shape());
    for (std::size_t k = 0; k < c * h; ++k)
        for (std::size_t x = 0; x < w; ++x) out[k * w + x] = image[k * w + (w - 1 - x)];
    return out;
}

Tensor<float> rotate(const Tensor<float>& image, double degrees) {
    if (image.rank() != 3) throw DimensionError("rotate: expected C×H×W");
    if (degrees == 0.0) return image.clone();
    const int c = static_cast<int>(image.dim(0)), h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    const cv::Mat m = cv::getRotationMatrix2D(cv::Point2f((w - 1) * 0.5f, (h - 1) * 0.5f), degrees, 1.0);
    Tensor<float> out(image.shape());
    for (int ch = 0; ch < c; ++ch) {
        const std::size_t off = static_cast<std::size_t>(ch) * h * w;
        cv::Mat src(h, w, CV_32F, const_cast<float*>(image.data().data() + off));
        cv::Mat dst(h, w, CV_32F, out.data().data() + off);
        cv::warpAffine(src, dst, m, dst.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
    }
    return out;
}

Tensor<float> augment(const Tensor<float>& image, const AugmentationPolicy& policy, std::mt19937_64& rng) {
    if (!policy.enabled) return image;
    policy.validate();
    const double u_flip = uniform01(rng);
    const double u_rot = uniform01(rng);
    const double u_bright = uniform01(rng);
    const double u_contrast = uniform01(rng);
    Tensor<float> out = u_flip < policy.flip_probability ? flip_horizontal(image) : image.clone();
    const double angle = (2.0 * u_rot - 1.0) * policy.rotation_degrees;
    if (angle != 0.0) out = rotate(out, angle);
    const auto offset = static_cast<float>((2.0 * u_bright - 1.0) * policy.brightness);
    const auto gain = static_cast<float>(1.0 + (2.0 * u_contrast - 1.0) * policy.contrast);
    if (offset != 0.0f || gain != 1.0f) {
        for (auto& v : out.data()) v = v * gain + offset;
    }
    return out;
}

}  // namespace osteo
