#include "pianofill/inference/bench.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pianofill::inference {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const BenchRow* find_row(const BenchReport& r, int total, int gap, GapPosition pos) {
  for (const auto& row : r.rows) {
    if (row.total_notes == total && row.gap_notes == gap && row.position == pos) return &row;
  }
  return nullptr;
}

}  // namespace

std::string_view gap_position_name(GapPosition p) {
  switch (p) {
    case GapPosition::kFront:
      return "front";
    case GapPosition::kMiddle:
      return "middle";
    case GapPosition::kBack:
      return "back";
  }
  return "?";
}

InpaintRequest bench_request(int total_notes, int gap_notes, GapPosition position, std::uint64_t seed) {
  if (gap_notes < 0 || gap_notes > total_notes) throw std::invalid_argument("gap larger than the performance");
  constexpr double kStep = 0.125;
  InpaintRequest req;
  for (int i = 0; i < total_notes; ++i) {
    req.context.notes.push_back({36 + (i * 5) % 48, 30 + (i * 11) % 80, i * kStep, 0.3});
  }
  int first = 0;
  if (position == GapPosition::kMiddle) first = (total_notes - gap_notes) / 2;
  if (position == GapPosition::kBack) first = total_notes - gap_notes;
  req.mode = Mode::kContiguous;
  req.start_s = first * kStep;
  req.end_s = (first + gap_notes) * kStep;
  req.note_count = gap_notes;
  req.seed = seed;
  req.overflow = Overflow::kFree;
  return req;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LinearFit f;
  const double den = n * sxx - sx * sx;
  if (x.size() < 2 || den == 0.0) return f;
  f.slope = (n * sxy - sx * sy) / den;
  f.intercept = (sy - f.slope * sx) / n;
  const double mean = sy / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += e * e;
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

BenchReport run_bench(const InpaintEngine& engine, const BenchOptions& options) {
  if (options.repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  BenchReport report;
  for (int total : options.total_notes) {
    for (int gap : options.gap_notes) {
      if (gap > total) continue;
      for (GapPosition pos : options.positions) {
        const InpaintRequest req = bench_request(total, gap, pos, options.seed);
        const GenerationPlan plan = build_plan(req);
        engine.run(plan, req);  // warm-up
        std::vector<double> enc, pre, samp, tot;
        for (int r = 0; r < options.repeats; ++r) {
          const Timings t = engine.run(plan, req).timings;
          enc.push_back(t.encode_s);
          pre.push_back(t.prefix_s);
          samp.push_back(t.sampling_s);
          tot.push_back(t.total_s);
        }
        report.rows.push_back({total, gap, pos, median(enc), median(pre), median(samp), median(tot)});
      }
    }
  }

  BenchSummary& s = report.summary;
  std::vector<double> at_positions;
  for (GapPosition pos : options.positions) {
    if (const auto* row = find_row(report, options.position_total, options.position_gap, pos)) {
      at_positions.push_back(row->sampling_s);
    }
  }
  if (at_positions.size() >= 2) {
    const auto [lo, hi] = std::minmax_element(at_positions.begin(), at_positions.end());
    s.position_spread = (*hi - *lo) / *lo;
    s.position_ok = s.position_spread <= options.tolerance;
  }

  if (!options.total_notes.empty()) {
    const auto [tmin, tmax] = std::minmax_element(options.total_notes.begin(), options.total_notes.end());
    const auto* a = find_row(report, *tmin, options.suffix_gap, options.linear_position);
    const auto* b = find_row(report, *tmax, options.suffix_gap, options.linear_position);
    if (a && b && a != b) {
      s.suffix_difference = std::abs(a->sampling_s - b->sampling_s) / std::min(a->sampling_s, b->sampling_s);
      s.suffix_ok = s.suffix_difference <= options.tolerance;
    }
  }

  std::vector<double> xs, ys;
  for (int gap : options.gap_notes) {
    if (const auto* row = find_row(report, options.linear_total, gap, options.linear_position)) {
      xs.push_back(gap);
      ys.push_back(row->sampling_s);
    }
  }
  if (xs.size() >= 3) {
    const LinearFit f = fit_line(xs, ys);
    s.slope_s_per_note = f.slope;
    s.intercept_s = f.intercept;
    s.r2 = f.r2;
    s.linear_ok = f.r2 >= options.min_r2 && f.slope > 0;
  }
  return report;
}

void write_bench_csv(std::ostream& out, const BenchReport& report) {
  out << "total_notes,gap_notes,position,encode_s,prefix_s,sampling_s,total_s\n";
  for (const auto& r : report.rows) {
    out << r.total_notes << ',' << r.gap_notes << ',' << gap_position_name(r.position) << ',' << r.encode_s << ','
        << r.prefix_s << ',' << r.sampling_s << ',' << r.total_s << '\n';
  }
}

}  // namespace pianofill::inference
