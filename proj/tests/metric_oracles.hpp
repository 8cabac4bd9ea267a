#pragma once

// Brute-force metric oracles: n-grams as joined strings, counts by linear
// scans, LCS by memoized recursion. Slow and independent of src/metrics.cpp.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "warmstart/metrics.hpp"

namespace oracle {

using Words = std::vector<std::string>;

inline Words words(const std::string& text, bool lower = false) {
  std::string t = warmstart::normalize_quotes(text);
  if (lower)
    for (auto& ch : t) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  Words out;
  std::string cur;
  for (char ch : t + " ") {
    if (ch == ' ' || ch == '\t' || ch == '\n') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  return out;
}

inline std::vector<std::string> grams(const Words& w, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + n <= w.size(); ++i) {
    std::string g;
    for (std::size_t k = 0; k < n; ++k) g += w[i + k] + "\x1f";
    out.push_back(g);
  }
  return out;
}

inline double cnt(const std::vector<std::string>& v, const std::string& g) {
  return static_cast<double>(std::count(v.begin(), v.end(), g));
}

inline double f1(double tp, double sel, double rel) {
  if (sel == 0 && rel == 0) return 1;
  if (sel == 0 || rel == 0) return 0;
  const double p = tp / sel, r = tp / rel;
  return p + r > 0 ? 2 * p * r / (p + r) : 0;
}

inline double sari(const warmstart::EvalExample& e, std::size_t max_n = 4) {
  const Words s = words(e.source), p = words(e.prediction);
  std::vector<Words> refs;
  for (const auto& r : e.references) refs.push_back(words(r));
  double keep = 0, del = 0, add = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto sg = grams(s, n), pg = grams(p, n);
    std::vector<std::vector<std::string>> rg;
    for (const auto& r : refs)
      if (!grams(r, n).empty()) rg.push_back(grams(r, n));
    std::set<std::string> all(sg.begin(), sg.end());
    all.insert(pg.begin(), pg.end());
    for (const auto& r : rg) all.insert(r.begin(), r.end());
    double k_tp = 0, k_sel = 0, k_rel = 0, d_tp = 0, d_sel = 0, d_rel = 0, a_tp = 0, a_sel = 0, a_rel = 0;
    for (const auto& g : all) {
      const double cs = cnt(sg, g), cp = cnt(pg, g);
      double avg = 0, mx = 0;
      for (const auto& r : rg) {
        avg += cnt(r, g);
        mx = std::max(mx, cnt(r, g));
      }
      if (!rg.empty()) avg /= static_cast<double>(rg.size());
      k_tp += std::min({cs, cp, avg});
      k_sel += std::min(cs, cp);
      k_rel += std::min(cs, avg);
      const double sp = std::max(cs - cp, 0.0), st = std::max(cs - avg, 0.0);
      d_tp += std::min(sp, st);
      d_sel += sp;
      d_rel += st;
      const double ps = std::max(cp - cs, 0.0), ts = std::max(mx - cs, 0.0);
      a_tp += std::min(ps, ts);
      a_sel += ps;
      a_rel += ts;
    }
    keep += f1(k_tp, k_sel, k_rel);
    del += (d_sel == 0 && d_rel == 0) ? 1.0 : (d_sel == 0 || d_rel == 0) ? 0.0 : d_tp / d_sel;
    add += f1(a_tp, a_sel, a_rel);
  }
  return 100.0 * (keep + del + add) / (3.0 * static_cast<double>(max_n));
}

inline double bleu(const std::vector<warmstart::EvalExample>& ex, bool cased, std::size_t max_n = 4) {
  std::vector<double> m(max_n), t(max_n);
  double c = 0, r = 0;
  for (const auto& e : ex) {
    const Words cand = words(e.prediction, !cased);
    std::vector<Words> refs;
    for (const auto& x : e.references) refs.push_back(words(x, !cased));
    c += static_cast<double>(cand.size());
    // Closest reference length, ties to the shorter one.
    double best = 1e18, best_len = 0;
    for (const auto& x : refs) {
      const double d = std::abs(static_cast<double>(x.size()) - static_cast<double>(cand.size()));
      if (d < best || (d == best && static_cast<double>(x.size()) < best_len)) {
        best = d;
        best_len = static_cast<double>(x.size());
      }
    }
    r += best_len;
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto cg = grams(cand, n);
      std::set<std::string> uniq(cg.begin(), cg.end());
      for (const auto& g : uniq) {
        double lim = 0;
        for (const auto& x : refs) lim = std::max(lim, cnt(grams(x, n), g));
        m[n - 1] += std::min(cnt(cg, g), lim);
      }
      t[n - 1] += static_cast<double>(cg.size());
    }
  }
  double logp = 0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (m[n] == 0 || t[n] == 0) return 0.0;
    logp += std::log(m[n] / t[n]) / static_cast<double>(max_n);
  }
  return 100.0 * (c > r ? 1.0 : std::exp(1.0 - r / c)) * std::exp(logp);
}

inline std::size_t lcs(const Words& a, const Words& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    return memo[key] = v;
  };
  return go(0, 0);
}

// n = 0 selects the LCS variant.
inline double rouge(const warmstart::EvalExample& e, std::size_t n) {
  const Words p = words(e.prediction);
  double best = 0;
  for (const auto& ref : e.references) {
    const Words r = words(ref);
    double overlap, np, nr;
    if (n == 0) {
      overlap = static_cast<double>(lcs(p, r));
      np = static_cast<double>(p.size());
      nr = static_cast<double>(r.size());
    } else {
      const auto pg = grams(p, n), rg = grams(r, n);
      std::set<std::string> uniq(pg.begin(), pg.end());
      overlap = 0;
      for (const auto& g : uniq) overlap += std::min(cnt(pg, g), cnt(rg, g));
      np = static_cast<double>(pg.size());
      nr = static_cast<double>(rg.size());
    }
    const double prec = np > 0 ? overlap / np : 0, rec = nr > 0 ? overlap / nr : 0;
    best = std::max(best, prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0);
  }
  return best;
}

inline double exact(const warmstart::EvalExample& e) {
  for (const auto& r : e.references)
    if (words(r) == words(e.prediction)) return 1.0;
  return 0.0;
}

}  // namespace oracle
