#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace clustcr {

double normal_cdf(double x);

/// Inverse standard normal CDF (Wichura's AS 241, about 1e-16 relative).
double normal_quantile(double p);

/// Two-sided critical value z_{1-(1-level)/2}.
double normal_critical(double level);

/// Empirical quantile by inverting the ECDF: the ceil(prob * n)-th order
/// statistic. The input is copied.
double empirical_quantile(std::vector<double> values, double prob);

/// Generator for the stream identified by (seed, stream). Streams with
/// different indices are statistically independent for practical purposes
/// and do not depend on how work is split across threads.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream);

/// Runs body(i) for i in [0, count) on up to `threads` worker threads.
/// threads <= 1 runs inline. The first exception thrown is rethrown.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

}  // namespace clustcr
