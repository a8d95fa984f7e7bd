#include "alprio/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include "alprio/error.hpp"
#include "alprio/kernels.hpp"
#include "alprio/tensor_io.hpp"

namespace alprio {

using ojson = nlohmann::ordered_json;

HoldoutEvaluation summarise_dice(std::vector<double> per_sample) {
    if (per_sample.empty()) throw DomainError("summarise_dice: no samples");
    HoldoutEvaluation e;
    const double n = static_cast<double>(per_sample.size());
    e.mean_dice = std::accumulate(per_sample.begin(), per_sample.end(), 0.0) / n;
    double ss = 0.0;
    for (double d : per_sample) ss += (d - e.mean_dice) * (d - e.mean_dice);
    e.std_dice = std::sqrt(ss / n);
    e.per_sample = std::move(per_sample);
    return e;
}

HoldoutEvaluation evaluate_holdout(const PredictorWeights& w, const PredictorConfig& cfg,
                                   const LabeledDataset& holdout) {
    if (holdout.empty()) throw DomainError("evaluate_holdout: holdout set is empty");
    return summarise_dice(per_sample_dice(w, cfg, holdout));
}

HoldoutEvaluation evaluate_predictions(const std::vector<FloatTensor>& probabilities, const LabeledDataset& holdout) {
    if (holdout.empty()) throw DomainError("evaluate_predictions: holdout set is empty");
    if (probabilities.size() != holdout.size())
        throw ShapeError("evaluate_predictions: " + std::to_string(probabilities.size()) + " predictions for " +
                         std::to_string(holdout.size()) + " holdout pairs");
    std::vector<double> d;
    for (std::size_t i = 0; i < holdout.size(); ++i) d.push_back(dice_score(binarize(probabilities[i]), holdout[i].mask));
    return summarise_dice(std::move(d));
}

void MMDConfig::validate() const {
    if (!std::isfinite(bandwidth)) throw ConfigError("mmd.bandwidth must be finite");
    if ((downsample_height == 0) != (downsample_width == 0))
        throw ConfigError("mmd.downsample needs both sides or neither");
}

namespace {

// Row i of the result holds the weights of input cells 0..in-1 for output cell i.
std::vector<std::vector<double>> area_weights(std::size_t in, std::size_t out) {
    std::vector<std::vector<double>> w(out, std::vector<double>(in, 0.0));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double lo = static_cast<double>(o) * scale, hi = static_cast<double>(o + 1) * scale;
        for (std::size_t i = static_cast<std::size_t>(lo); i < in && static_cast<double>(i) < hi; ++i) {
            const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
            if (overlap > 0.0) w[o][i] = overlap / scale;
        }
    }
    return w;
}

std::pair<std::size_t, std::size_t> image_dims(const FloatTensor& image) {
    if (image.rank() == 2) return {image.dim(0), image.dim(1)};
    if (image.rank() == 3 && image.dim(0) == 1) return {image.dim(1), image.dim(2)};
    throw ShapeError("expected an (H, W) or (1, H, W) image, got " + shape_string(image.shape));
}

std::vector<double> flatten(const FloatTensor& image, const MMDConfig& cfg) {
    if (cfg.downsample_height == 0) return std::vector<double>(image.data.begin(), image.data.end());
    return downsample_image(image, cfg.downsample_height, cfg.downsample_width);
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return s;
}

std::vector<std::vector<double>> flatten_all(const std::vector<const FloatTensor*>& set, const MMDConfig& cfg) {
    std::vector<std::vector<double>> rows;
    rows.reserve(set.size());
    for (const FloatTensor* img : set) {
        if (img == nullptr) throw DomainError("mmd: null image");
        rows.push_back(flatten(*img, cfg));
    }
    return rows;
}

double bandwidth_for(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                     const MMDConfig& cfg) {
    if (cfg.bandwidth > 0.0) return cfg.bandwidth;
    std::vector<std::vector<double>> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    const double m = median_pairwise_distance(pooled);
    return m > 0.0 ? m : 1.0;
}

}  // namespace

std::vector<double> downsample_image(const FloatTensor& image, std::size_t out_h, std::size_t out_w) {
    const auto [h, w] = image_dims(image);
    if (out_h == 0 || out_w == 0) throw DomainError("downsample_image: zero output size");
    const auto wy = area_weights(h, out_h);
    const auto wx = area_weights(w, out_w);
    std::vector<double> rows(out_h * w, 0.0);
    for (std::size_t o = 0; o < out_h; ++o)
        for (std::size_t y = 0; y < h; ++y) {
            if (wy[o][y] == 0.0) continue;
            for (std::size_t x = 0; x < w; ++x) rows[o * w + x] += wy[o][y] * image.data[y * w + x];
        }
    std::vector<double> out(out_h * out_w, 0.0);
    for (std::size_t o = 0; o < out_h; ++o)
        for (std::size_t p = 0; p < out_w; ++p)
            for (std::size_t x = 0; x < w; ++x) out[o * out_w + p] += wx[p][x] * rows[o * w + x];
    return out;
}

double median_pairwise_distance(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size();
    if (n < 2) throw DomainError("median_pairwise_distance: need at least two rows");
    std::vector<double> d(n * (n - 1) / 2);
    const long ln = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::worker_threads())
    for (long i = 0; i < ln; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        std::size_t k = iu * (2 * n - iu - 1) / 2;
        for (std::size_t j = iu + 1; j < n; ++j) d[k++] = std::sqrt(squared_distance(rows[iu], rows[j]));
    }
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<long>(mid), d.end());
    const double upper = d[mid];
    if (d.size() % 2 == 1) return upper;
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<long>(mid));
    return 0.5 * (lower + upper);
}

double median_heuristic_bandwidth(const std::vector<const FloatTensor*>& set_a,
                                  const std::vector<const FloatTensor*>& set_b, const MMDConfig& cfg) {
    MMDConfig c = cfg;
    c.bandwidth = 0.0;
    return bandwidth_for(flatten_all(set_a, c), flatten_all(set_b, c), c);
}

double mmd(const std::vector<const FloatTensor*>& set_a, const std::vector<const FloatTensor*>& set_b,
           const MMDConfig& cfg) {
    cfg.validate();
    if (set_a.empty() || set_b.empty()) throw DomainError("mmd: empty image set");
    const bool unbiased = cfg.estimator == MMDEstimator::unbiased;
    if (unbiased && (set_a.size() < 2 || set_b.size() < 2))
        throw DomainError("mmd: the unbiased estimator needs at least two images per set");
    auto x = flatten_all(set_a, cfg);
    auto y = flatten_all(set_b, cfg);
    if (x.front().size() != y.front().size()) throw ShapeError("mmd: image sets have different pixel counts");
    for (const auto& r : x)
        if (r.size() != x.front().size()) throw ShapeError("mmd: mixed image sizes in the first set");
    for (const auto& r : y)
        if (r.size() != x.front().size()) throw ShapeError("mmd: mixed image sizes in the second set");
    if (std::make_pair(y.size(), y) < std::make_pair(x.size(), x)) std::swap(x, y);

    const double sigma = bandwidth_for(x, y, cfg);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const auto mean_kernel = [&](const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& q,
                                 bool same) {
        const long np = static_cast<long>(p.size());
        std::vector<double> row_sums(p.size(), 0.0);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::worker_threads())
        for (long i = 0; i < np; ++i) {
            const auto iu = static_cast<std::size_t>(i);
            double s = 0.0;
            for (std::size_t j = 0; j < q.size(); ++j) {
                if (same && unbiased && iu == j) continue;
                s += std::exp(-squared_distance(p[iu], q[j]) * inv);
            }
            row_sums[iu] = s;
        }
        const double total = std::accumulate(row_sums.begin(), row_sums.end(), 0.0);
        const double pairs = same && unbiased ? static_cast<double>(p.size()) * static_cast<double>(p.size() - 1)
                                              : static_cast<double>(p.size()) * static_cast<double>(q.size());
        return total / pairs;
    };
    const double v = mean_kernel(x, x, true) + mean_kernel(y, y, true) - 2.0 * mean_kernel(x, y, false);
    return unbiased ? v : std::max(0.0, v);
}

namespace {

GroupStats group_stats(const std::vector<double>& v) {
    GroupStats g;
    g.n = v.size();
    g.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - g.mean) * (x - g.mean);
    g.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return g;
}

}  // namespace

ComparisonResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) throw DomainError("welch_ttest: each group needs at least two values");
    ComparisonResult r;
    r.a = group_stats(a);
    r.b = group_stats(b);
    const double sa = r.a.std * r.a.std / static_cast<double>(r.a.n);
    const double sb = r.b.std * r.b.std / static_cast<double>(r.b.n);
    const double se2 = sa + sb;
    const double diff = r.a.mean - r.b.mean;
    if (se2 == 0.0) {
        r.degrees_of_freedom = static_cast<double>(r.a.n + r.b.n - 2);
        if (diff == 0.0) {
            r.t_statistic = 0.0;
            r.p_value = 1.0;
        } else {
            r.t_statistic = diff > 0.0 ? std::numeric_limits<double>::infinity()
                                       : -std::numeric_limits<double>::infinity();
            r.p_value = 0.0;
        }
        return r;
    }
    r.t_statistic = diff / std::sqrt(se2);
    r.degrees_of_freedom =
        se2 * se2 / (sa * sa / static_cast<double>(r.a.n - 1) + sb * sb / static_cast<double>(r.b.n - 1));
    const boost::math::students_t dist(r.degrees_of_freedom);
    r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t_statistic))));
    return r;
}

ConvergenceResult labels_to_convergence(const std::vector<double>& dice, std::size_t beta0, std::size_t beta,
                                        const PlateauRule& rule) {
    if (dice.empty()) throw DomainError("labels_to_convergence: empty Dice series");
    if (rule.consecutive < 1) throw ConfigError("plateau.consecutive must be >= 1");
    ConvergenceResult r;
    const std::size_t need = static_cast<std::size_t>(rule.consecutive);
    for (std::size_t k = 0; k + need < dice.size(); ++k) {
        bool flat = true;
        for (std::size_t j = k; j < k + need && flat; ++j) flat = 100.0 * dice[j + 1] - 100.0 * dice[j] < rule.min_gain_points;
        if (flat) {
            r.reached = true;
            r.c_star = static_cast<int>(k + 1);
            break;
        }
    }
    if (!r.reached) r.c_star = static_cast<int>(dice.size());
    r.labelled = beta0 + beta * static_cast<std::size_t>(r.c_star);
    return r;
}

ConvergenceResult labels_to_convergence(const ALRunRecord& record, const PlateauRule& rule) {
    std::vector<double> dice;
    for (const auto& it : record.iterations) dice.push_back(it.holdout_dice_mean);
    return labels_to_convergence(dice, record.beta0, record.beta, rule);
}

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

struct GroupKey {
    Strategy strategy;
    std::size_t beta0, beta;
    auto operator<=>(const GroupKey&) const = default;
};

std::string key_cols(const GroupKey& k) {
    return to_string(k.strategy) + "," + std::to_string(k.beta0) + "," + std::to_string(k.beta);
}

// Holdout Dice at c (0 = after the initial training), or nothing past the end of the run.
std::optional<double> dice_at(const ALRunRecord& r, std::size_t c) {
    if (c == 0) return r.init_holdout_dice_mean;
    if (c > r.iterations.size()) return std::nullopt;
    return r.iterations[c - 1].holdout_dice_mean;
}

// Ids labelled once iteration c is complete.
std::vector<std::string> labelled_after(const ALRunRecord& r, std::size_t c) {
    std::vector<std::string> ids = r.initial_ids;
    for (std::size_t k = 0; k < c && k < r.iterations.size(); ++k)
        ids.insert(ids.end(), r.iterations[k].selected_ids.begin(), r.iterations[k].selected_ids.end());
    return ids;
}

std::vector<const FloatTensor*> images_of(const std::vector<std::string>& ids,
                                          const std::map<std::string, const FloatTensor*>& by_id) {
    std::vector<const FloatTensor*> out;
    for (const auto& id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw FormatError("record references id '" + id + "' that is not in the pool");
        out.push_back(it->second);
    }
    return out;
}

const char* kReportReadme =
    "# AL report\n"
    "\n"
    "All files are derived from the AL run records; re-running on the same records gives identical files.\n"
    "\n"
    "- `dice_vs_c.csv`: strategy, beta0, beta, c, labelled, n, dice_mean, dice_std. Holdout Dice after\n"
    "  iteration c (c = 0 is the initial labelled set) averaged over the seeds that reached c; dice_std is\n"
    "  the sample standard deviation across seeds (0 when n < 2).\n"
    "- `convergence.csv`: strategy, seed, beta0, beta, reached, c_star, labelled. Plateau start per run\n"
    "  (gain below the threshold for the configured number of consecutive iterations); labelled =\n"
    "  beta0 + beta * c_star. When the plateau is not reached c_star is the last iteration.\n"
    "- `label_efficiency.csv`: strategy, beta0, beta, n, n_reached, median_labelled, mean_labelled.\n"
    "- `comparison.csv`: strategy_a, strategy_b, beta0, beta, c, n_a, mean_a, std_a, n_b, mean_b, std_b,\n"
    "  t, df, p. Two-sided Welch t-test of per-seed holdout Dice at each c where both groups have at least\n"
    "  two seeds. Absent when no such pair exists.\n"
    "- `mmd_series.csv`: strategy, seed, beta0, beta, iteration, mmd_support_vs_pool,\n"
    "  mmd_support_vs_holdout, mmd_random_vs_proposed. Squared MMD between the labelled support images\n"
    "  and the pool or holdout images; the last column compares the labelled sets of the random and\n"
    "  proposed runs with the same seed. Empty cells mean the quantity is unavailable. Only written when\n"
    "  the pool images are supplied.\n"
    "- `summary.json`: record count, strategies, plateau rule, comparison availability and the MMD trend\n"
    "  of the proposed strategy.\n";

}  // namespace

void emit_report(const std::vector<ALRunRecord>& records, const std::filesystem::path& out_dir,
                 const ReportOptions& options) {
    if (records.empty()) throw DomainError("emit_report: no records");
    options.mmd.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create report directory " + out_dir.string() + ": " + ec.message());

    std::vector<const ALRunRecord*> sorted;
    for (const auto& r : records) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(), [](const ALRunRecord* a, const ALRunRecord* b) {
        return std::tie(a->strategy, a->beta0, a->beta, a->seed) < std::tie(b->strategy, b->beta0, b->beta, b->seed);
    });
    std::map<GroupKey, std::vector<const ALRunRecord*>> groups;
    for (const ALRunRecord* r : sorted) groups[GroupKey{r->strategy, r->beta0, r->beta}].push_back(r);

    std::ostringstream dice_csv;
    dice_csv << "strategy,beta0,beta,c,labelled,n,dice_mean,dice_std\n";
    for (const auto& [key, runs] : groups) {
        std::size_t max_c = 0;
        for (const ALRunRecord* r : runs) max_c = std::max(max_c, r->iterations.size());
        for (std::size_t c = 0; c <= max_c; ++c) {
            std::vector<double> v;
            for (const ALRunRecord* r : runs)
                if (auto d = dice_at(*r, c)) v.push_back(*d);
            if (v.empty()) continue;
            const GroupStats g = group_stats(v);
            dice_csv << key_cols(key) << ',' << c << ',' << key.beta0 + key.beta * c << ',' << g.n << ','
                     << num(g.mean) << ',' << num(g.std) << '\n';
        }
    }
    write_text_file(out_dir / "dice_vs_c.csv", dice_csv.str());

    std::ostringstream conv_csv, eff_csv;
    conv_csv << "strategy,seed,beta0,beta,reached,c_star,labelled\n";
    eff_csv << "strategy,beta0,beta,n,n_reached,median_labelled,mean_labelled\n";
    ojson efficiency = ojson::array();
    for (const auto& [key, runs] : groups) {
        std::vector<double> labelled;
        std::size_t reached = 0;
        for (const ALRunRecord* r : runs) {
            if (r->iterations.empty()) continue;
            const ConvergenceResult cr = labels_to_convergence(*r, options.plateau);
            conv_csv << to_string(r->strategy) << ',' << r->seed << ',' << r->beta0 << ',' << r->beta << ','
                     << (cr.reached ? 1 : 0) << ',' << cr.c_star << ',' << cr.labelled << '\n';
            labelled.push_back(static_cast<double>(cr.labelled));
            reached += cr.reached ? 1 : 0;
        }
        if (labelled.empty()) continue;
        std::vector<double> s = labelled;
        std::sort(s.begin(), s.end());
        const double median = s.size() % 2 == 1 ? s[s.size() / 2] : 0.5 * (s[s.size() / 2 - 1] + s[s.size() / 2]);
        const double mean = group_stats(s).mean;
        eff_csv << key_cols(key) << ',' << s.size() << ',' << reached << ',' << num(median) << ',' << num(mean)
                << '\n';
        efficiency.push_back(ojson{{"strategy", to_string(key.strategy)},
                                   {"beta0", key.beta0},
                                   {"beta", key.beta},
                                   {"median_labelled", median}});
    }
    write_text_file(out_dir / "convergence.csv", conv_csv.str());
    write_text_file(out_dir / "label_efficiency.csv", eff_csv.str());

    std::ostringstream cmp_csv;
    cmp_csv << "strategy_a,strategy_b,beta0,beta,c,n_a,mean_a,std_a,n_b,mean_b,std_b,t,df,p\n";
    std::size_t comparisons = 0;
    for (auto ia = groups.begin(); ia != groups.end(); ++ia)
        for (auto ib = std::next(ia); ib != groups.end(); ++ib) {
            const GroupKey& ka = ia->first;
            const GroupKey& kb = ib->first;
            if (ka.beta0 != kb.beta0 || ka.beta != kb.beta) continue;
            for (std::size_t c = 0;; ++c) {
                std::vector<double> va, vb;
                for (const ALRunRecord* r : ia->second)
                    if (auto d = dice_at(*r, c)) va.push_back(*d);
                for (const ALRunRecord* r : ib->second)
                    if (auto d = dice_at(*r, c)) vb.push_back(*d);
                if (va.size() < 2 || vb.size() < 2) break;
                const ComparisonResult t = welch_ttest(va, vb);
                cmp_csv << to_string(ka.strategy) << ',' << to_string(kb.strategy) << ',' << ka.beta0 << ','
                        << ka.beta << ',' << c << ',' << t.a.n << ',' << num(t.a.mean) << ',' << num(t.a.std) << ','
                        << t.b.n << ',' << num(t.b.mean) << ',' << num(t.b.std) << ',' << num(t.t_statistic) << ','
                        << num(t.degrees_of_freedom) << ',' << num(t.p_value) << '\n';
                ++comparisons;
            }
        }
    std::filesystem::remove(out_dir / "comparison.csv", ec);
    if (comparisons > 0) write_text_file(out_dir / "comparison.csv", cmp_csv.str());

    ojson trend = nullptr;
    std::filesystem::remove(out_dir / "mmd_series.csv", ec);
    if (options.pool != nullptr) {
        std::map<std::string, const FloatTensor*> by_id;
        for (const auto& p : options.pool->pairs) by_id.emplace(p.id, &p.image);
        std::vector<const FloatTensor*> pool_images;
        for (const auto& p : options.pool->pairs) pool_images.push_back(&p.image);
        std::vector<const FloatTensor*> holdout_images;
        if (options.holdout != nullptr)
            for (const auto& p : options.holdout->pairs) holdout_images.push_back(&p.image);

        std::map<std::tuple<std::uint64_t, std::size_t, std::size_t>, const ALRunRecord*> random_runs, proposed_runs;
        for (const ALRunRecord* r : sorted) {
            if (r->strategy == Strategy::random) random_runs.emplace(std::make_tuple(r->seed, r->beta0, r->beta), r);
            if (r->strategy == Strategy::proposed)
                proposed_runs.emplace(std::make_tuple(r->seed, r->beta0, r->beta), r);
        }

        std::ostringstream mmd_csv;
        mmd_csv << "strategy,seed,beta0,beta,iteration,mmd_support_vs_pool,mmd_support_vs_holdout,"
                   "mmd_random_vs_proposed\n";
        std::map<std::size_t, std::vector<double>> proposed_holdout_series;
        for (const ALRunRecord* r : sorted) {
            const auto key = std::make_tuple(r->seed, r->beta0, r->beta);
            const ALRunRecord* partner = nullptr;
            if (r->strategy == Strategy::random && proposed_runs.count(key) != 0) partner = proposed_runs.at(key);
            if (r->strategy == Strategy::proposed && random_runs.count(key) != 0) partner = random_runs.at(key);
            for (std::size_t c = 0; c <= r->iterations.size(); ++c) {
                const auto support = images_of(labelled_after(*r, c), by_id);
                mmd_csv << to_string(r->strategy) << ',' << r->seed << ',' << r->beta0 << ',' << r->beta << ',' << c
                        << ',' << num(mmd(support, pool_images, options.mmd)) << ',';
                if (!holdout_images.empty()) {
                    const double v = mmd(support, holdout_images, options.mmd);
                    mmd_csv << num(v);
                    if (r->strategy == Strategy::proposed) proposed_holdout_series[c].push_back(v);
                }
                mmd_csv << ',';
                if (partner != nullptr && c <= partner->iterations.size()) {
                    // Ordered as (random, proposed) so both rows carry the same value.
                    const ALRunRecord* rnd = r->strategy == Strategy::random ? r : partner;
                    const ALRunRecord* prp = r->strategy == Strategy::random ? partner : r;
                    mmd_csv << num(mmd(images_of(labelled_after(*rnd, c), by_id),
                                       images_of(labelled_after(*prp, c), by_id), options.mmd));
                }
                mmd_csv << '\n';
            }
        }
        write_text_file(out_dir / "mmd_series.csv", mmd_csv.str());

        if (!proposed_holdout_series.empty()) {
            std::vector<double> means;
            for (const auto& [c, v] : proposed_holdout_series) means.push_back(group_stats(v).mean);
            std::size_t decreases = 0;
            for (std::size_t k = 1; k < means.size(); ++k) decreases += means[k] < means[k - 1] ? 1 : 0;
            double slope = 0.0;
            if (means.size() > 1) {
                const double xm = static_cast<double>(means.size() - 1) / 2.0;
                const double ym = group_stats(means).mean;
                double sxy = 0.0, sxx = 0.0;
                for (std::size_t k = 0; k < means.size(); ++k) {
                    const double dx = static_cast<double>(k) - xm;
                    sxy += dx * (means[k] - ym);
                    sxx += dx * dx;
                }
                slope = sxy / sxx;
            }
            trend = ojson{{"series", "mmd_support_vs_holdout, mean over proposed runs"},
                          {"steps", means.empty() ? 0 : means.size() - 1},
                          {"decreasing_steps", decreases},
                          {"monotone_decrease", means.size() > 1 && decreases == means.size() - 1},
                          {"least_squares_slope", slope}};
        }
    }

    std::set<std::string> strategies;
    for (const ALRunRecord* r : sorted) strategies.insert(to_string(r->strategy));
    ojson summary;
    summary["records"] = records.size();
    summary["strategies"] = strategies;
    summary["plateau"] = ojson{{"min_gain_points", options.plateau.min_gain_points},
                               {"consecutive", options.plateau.consecutive}};
    summary["label_efficiency"] = efficiency;
    summary["comparison"] = comparisons > 0 ? ojson("comparison.csv") : ojson("absent");
    summary["mmd_trend_proposed"] = trend;
    write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
    write_text_file(out_dir / "README.md", kReportReadme);
}

}  // namespace alprio
