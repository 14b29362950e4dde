#include "baa/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "baa/errors.hpp"
#include "baa/image_io.hpp"
#include "baa/random.hpp"

namespace baa {

namespace {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
        --e;
    s = s.substr(b, e - b);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
        s = s.substr(1, s.size() - 2);
    return std::string(s);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') {
            quoted = !quoted;
            field.push_back(ch);
        } else if (ch == ',' && !quoted) {
            fields.push_back(trim(field));
            field.clear();
        } else {
            field.push_back(ch);
        }
    }
    fields.push_back(trim(field));
    return fields;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

int bin_of(int age, int width) { return (age / width) * width; }

} // namespace

const SampleRecord& DatasetManifest::find(const std::string& id) const {
    auto it = std::find_if(records.begin(), records.end(), [&](const SampleRecord& r) { return r.id == id; });
    if (it == records.end())
        throw InputError("id not present in manifest: " + id);
    return *it;
}

DatasetManifest load_manifest(const std::filesystem::path& csv_path, const std::filesystem::path& image_dir,
                              bool strict) {
    std::ifstream in(csv_path);
    if (!in)
        throw IoError("cannot open manifest " + csv_path.string());
    if (!std::filesystem::is_directory(image_dir))
        throw IoError("image directory does not exist: " + image_dir.string());

    std::string line;
    if (!std::getline(in, line))
        throw MalformedRow(1, "missing header");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0)
        line.erase(0, 3);

    const auto header = split_csv_line(line);
    int id_col = -1, age_col = -1, male_col = -1;
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
        const auto name = lower(header[i]);
        if (name == "id")
            id_col = i;
        else if (name == "boneage")
            age_col = i;
        else if (name == "male")
            male_col = i;
    }
    if (id_col < 0 || age_col < 0 || male_col < 0)
        throw MalformedRow(1, "header must contain id, boneage, male");
    const auto needed = static_cast<std::size_t>(std::max({id_col, age_col, male_col}) + 1);

    DatasetManifest manifest;
    manifest.source = "csv:" + csv_path.string() + ";images:" + image_dir.string();
    std::unordered_set<std::string> seen;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        const auto fields = split_csv_line(line);
        if (fields.size() < needed)
            throw MalformedRow(line_no, "expected at least " + std::to_string(needed) + " fields");

        SampleRecord record;
        record.id = fields[id_col];
        if (record.id.empty())
            throw MalformedRow(line_no, "empty id");

        const auto& age_text = fields[age_col];
        int age = 0;
        auto [ptr, ec] = std::from_chars(age_text.data(), age_text.data() + age_text.size(), age);
        if (ec != std::errc{} || ptr != age_text.data() + age_text.size())
            throw MalformedRow(line_no, "boneage '" + age_text + "' is not an integer");
        if (age < kMinBoneAge || age > kMaxBoneAge)
            throw MalformedRow(line_no, "boneage " + age_text + " outside [1, 288]");
        record.bone_age = age;

        const auto male_text = lower(fields[male_col]);
        if (male_text == "true")
            record.male = true;
        else if (male_text == "false")
            record.male = false;
        else
            throw MalformedRow(line_no, "male '" + fields[male_col] + "' is not True/False");

        if (!seen.insert(record.id).second)
            throw DuplicateId(record.id);

        record.image_path = image_dir / (record.id + ".png");
        if (strict) {
            std::ifstream probe(record.image_path, std::ios::binary);
            if (!probe)
                throw MissingImage(record.id);
        }
        manifest.records.push_back(std::move(record));
    }
    return manifest;
}

void write_manifest_csv(const DatasetManifest& manifest, const std::filesystem::path& csv_path) {
    std::ofstream out(csv_path);
    if (!out)
        throw IoError("cannot write " + csv_path.string());
    out << "id,boneage,male\n";
    for (const auto& r : manifest.records)
        out << r.id << ',' << r.bone_age << ',' << (r.male ? "True" : "False") << '\n';
    if (!out)
        throw IoError("write failed for " + csv_path.string());
}

DatasetStats compute_stats(const DatasetManifest& manifest, int bin_width) {
    if (bin_width < 1)
        throw InputError("bin_width must be >= 1");
    DatasetStats stats;
    stats.bin_width = bin_width;
    stats.total = manifest.records.size();
    if (stats.total == 0)
        return stats;

    stats.min_age = kMaxBoneAge + 1;
    stats.max_age = 0;
    double sum = 0.0;
    for (const auto& r : manifest.records) {
        const int bin = bin_of(r.bone_age, bin_width);
        ++stats.age_histogram[bin];
        if (r.male) {
            ++stats.male_count;
            ++stats.male_histogram[bin];
        } else {
            ++stats.female_count;
            ++stats.female_histogram[bin];
        }
        stats.min_age = std::min(stats.min_age, r.bone_age);
        stats.max_age = std::max(stats.max_age, r.bone_age);
        sum += r.bone_age;
    }
    stats.mean_age = sum / static_cast<double>(stats.total);

    // std::map iterates in ascending bin order, so ties keep the lowest bin.
    std::size_t best = 0;
    for (const auto& [bin, count] : stats.age_histogram) {
        if (count > best) {
            best = count;
            stats.modal_bin = bin;
        }
    }
    return stats;
}

nlohmann::json to_json(const DatasetStats& stats) {
    auto histogram = [](const std::map<int, std::size_t>& h) {
        auto arr = nlohmann::json::array();
        for (const auto& [bin, count] : h)
            arr.push_back({{"bin", bin}, {"count", count}});
        return arr;
    };
    return {
        {"total", stats.total},
        {"male_count", stats.male_count},
        {"female_count", stats.female_count},
        {"min", stats.min_age},
        {"max", stats.max_age},
        {"mean", stats.mean_age},
        {"bin_width", stats.bin_width},
        {"modal_bin", stats.modal_bin},
        {"histogram", histogram(stats.age_histogram)},
        {"histogram_male", histogram(stats.male_histogram)},
        {"histogram_female", histogram(stats.female_histogram)},
    };
}

SplitAssignment make_splits(const DatasetManifest& manifest, const SplitSizes& sizes, std::uint64_t seed) {
    const std::size_t n = manifest.records.size();
    if (sizes.total() > n)
        throw InsufficientSamples(fmt::format("requested {}+{}+{}={} samples from a manifest of {}", sizes.train,
                                              sizes.val, sizes.test, sizes.total(), n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, streams::split));
    std::shuffle(order.begin(), order.end(), rng);

    // 0 = unassigned, 1 = train, 2 = val, 3 = test
    std::vector<int> slot(n, 0);
    for (std::size_t i = 0; i < sizes.train; ++i)
        slot[order[i]] = 1;
    for (std::size_t i = sizes.train; i < sizes.train + sizes.val; ++i)
        slot[order[i]] = 2;
    for (std::size_t i = sizes.train + sizes.val; i < sizes.total(); ++i)
        slot[order[i]] = 3;

    SplitAssignment split;
    split.seed = seed;
    split.sizes = sizes;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& id = manifest.records[i].id;
        switch (slot[i]) {
        case 1: split.train_ids.push_back(id); break;
        case 2: split.val_ids.push_back(id); break;
        case 3: split.test_ids.push_back(id); break;
        default: break;
        }
    }
    return split;
}

nlohmann::json to_json(const SplitAssignment& split) {
    return {
        {"seed", split.seed},
        {"sizes", {{"train", split.sizes.train}, {"val", split.sizes.val}, {"test", split.sizes.test}}},
        {"train", split.train_ids},
        {"val", split.val_ids},
        {"test", split.test_ids},
    };
}

SplitAssignment split_from_json(const nlohmann::json& j) {
    try {
        SplitAssignment split;
        split.seed = j.at("seed").get<std::uint64_t>();
        const auto& sizes = j.at("sizes");
        split.sizes = {sizes.at("train").get<std::size_t>(), sizes.at("val").get<std::size_t>(),
                       sizes.at("test").get<std::size_t>()};
        split.train_ids = j.at("train").get<std::vector<std::string>>();
        split.val_ids = j.at("val").get<std::vector<std::string>>();
        split.test_ids = j.at("test").get<std::vector<std::string>>();
        return split;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid split file: ") + e.what());
    }
}

std::vector<SampleRecord> select_records(const DatasetManifest& manifest, const std::vector<std::string>& ids) {
    std::unordered_map<std::string, const SampleRecord*> index;
    index.reserve(manifest.records.size());
    for (const auto& r : manifest.records)
        index.emplace(r.id, &r);

    std::vector<SampleRecord> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.find(id);
        if (it == index.end())
            throw InputError("split id not present in manifest: " + id);
        out.push_back(*it->second);
    }
    return out;
}

DatasetManifest build_synthetic_dataset(const std::filesystem::path& out_dir, std::size_t n, std::uint64_t seed) {
    if (n < 1)
        throw InputError("synthetic dataset needs n >= 1");

    const auto image_dir = out_dir / "images";
    std::error_code ec;
    std::filesystem::create_directories(image_dir, ec);
    if (ec)
        throw IoError("cannot create " + image_dir.string() + ": " + ec.message());

    Rng rng(derive_seed(seed, streams::synth));
    std::uniform_int_distribution<int> age_dist(kMinBoneAge, kMaxBoneAge);
    std::bernoulli_distribution male_dist(0.5);
    std::uniform_real_distribution<double> noise(-SyntheticLayout::kNoiseAmplitude, SyntheticLayout::kNoiseAmplitude);

    DatasetManifest manifest;
    manifest.source = "synthetic:" + std::to_string(seed);

    constexpr int side = SyntheticLayout::kImageSize;
    for (std::size_t i = 0; i < n; ++i) {
        SampleRecord record;
        record.id = fmt::format("synth{:05d}", i);
        record.bone_age = age_dist(rng);
        record.male = male_dist(rng);
        record.image_path = image_dir / (record.id + ".png");

        Raster raster{side, side, 1, std::vector<std::uint8_t>(side * side)};
        const double level = synthetic_brightness(record.bone_age);
        for (auto& px : raster.pixels)
            px = static_cast<std::uint8_t>(std::clamp(std::lround(level + noise(rng)), 0L, 255L));
        if (!write_png(record.image_path, raster))
            throw IoError("cannot write " + record.image_path.string());
        manifest.records.push_back(std::move(record));
    }
    write_manifest_csv(manifest, out_dir / "manifest.csv");
    return manifest;
}

} // namespace baa
