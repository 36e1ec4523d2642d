#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "filtertwin/kernels.hpp"

namespace filtertwin::kernels {

namespace detail {
#ifndef FILTERTWIN_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif
}  // namespace detail

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const detail::KernelTable* table_for(Isa isa) {
  if (isa == Isa::scalar) return &detail::scalar_table();
  return cpu_has_avx2() ? detail::avx2_table() : nullptr;
}

const detail::KernelTable* initial_table() {
  if (const char* env = std::getenv("FILTERTWIN_ISA")) {
    std::string want(env);
    if (want == "scalar") return table_for(Isa::scalar);
    if (want == "avx2" && table_for(Isa::avx2)) return table_for(Isa::avx2);
  }
  if (auto* t = table_for(Isa::avx2)) return t;
  return table_for(Isa::scalar);
}

std::atomic<const detail::KernelTable*>& active_table() {
  static std::atomic<const detail::KernelTable*> table{initial_table()};
  return table;
}

inline const detail::KernelTable& k() { return *active_table().load(std::memory_order_relaxed); }

void check_matrix(std::size_t data_size, std::size_t rows, std::size_t cols) {
  if (data_size < rows * cols) throw std::invalid_argument("matrix view smaller than rows*cols");
}

}  // namespace

std::string_view to_string(Isa isa) { return isa == Isa::scalar ? "scalar" : "avx2"; }

bool isa_available(Isa isa) { return table_for(isa) != nullptr; }

Isa active_isa() {
  return active_table().load() == &detail::scalar_table() ? Isa::scalar : Isa::avx2;
}

void force_isa(Isa isa) {
  auto* t = table_for(isa);
  if (!t) throw std::runtime_error("kernel variant '" + std::string(to_string(isa)) + "' unavailable");
  active_table().store(t);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
  return k().dot(a.data(), b.data(), a.size());
}

double sum(std::span<const double> x) { return k().sum(x.data(), x.size()); }

double sum_sq_dev(std::span<const double> x, double center) {
  return k().sum_sq_dev(x.data(), x.size(), center);
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: size mismatch");
  k().axpy(a, x.data(), y.data(), x.size());
}

void gemv(ConstMatrix w, std::span<const double> x, std::span<const double> bias, std::span<double> y) {
  check_matrix(w.data.size(), w.rows, w.cols);
  if (x.size() != w.cols || y.size() != w.rows || (!bias.empty() && bias.size() != w.rows))
    throw std::invalid_argument("gemv: shape mismatch");
  k().gemv(w.data.data(), w.rows, w.cols, x.data(), bias.empty() ? nullptr : bias.data(), y.data());
}

void gemv_t_acc(ConstMatrix w, std::span<const double> v, std::span<double> out) {
  check_matrix(w.data.size(), w.rows, w.cols);
  if (v.size() != w.rows || out.size() != w.cols) throw std::invalid_argument("gemv_t_acc: shape mismatch");
  k().gemv_t_acc(w.data.data(), w.rows, w.cols, v.data(), out.data());
}

void ger_acc(MutableMatrix w, std::span<const double> u, std::span<const double> x) {
  check_matrix(w.data.size(), w.rows, w.cols);
  if (u.size() != w.rows || x.size() != w.cols) throw std::invalid_argument("ger_acc: shape mismatch");
  k().ger_acc(w.data.data(), w.rows, w.cols, u.data(), x.data());
}

void gemm_nn_acc(ConstMatrix a, ConstMatrix b, MutableMatrix c) {
  check_matrix(a.data.size(), a.rows, a.cols);
  check_matrix(b.data.size(), b.rows, b.cols);
  check_matrix(c.data.size(), c.rows, c.cols);
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols) throw std::invalid_argument("gemm_nn_acc: shape mismatch");
  k().gemm_nn_acc(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
}

void gemm_tn_acc(ConstMatrix a, ConstMatrix b, MutableMatrix c) {
  check_matrix(a.data.size(), a.rows, a.cols);
  check_matrix(b.data.size(), b.rows, b.cols);
  check_matrix(c.data.size(), c.rows, c.cols);
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols) throw std::invalid_argument("gemm_tn_acc: shape mismatch");
  k().gemm_tn_acc(a.data.data(), b.data.data(), c.data.data(), a.cols, a.rows, b.cols);
}

void gemm_nt_acc(ConstMatrix a, ConstMatrix b, MutableMatrix c) {
  check_matrix(a.data.size(), a.rows, a.cols);
  check_matrix(b.data.size(), b.rows, b.cols);
  check_matrix(c.data.size(), c.rows, c.cols);
  if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows) throw std::invalid_argument("gemm_nt_acc: shape mismatch");
  k().gemm_nt_acc(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.rows);
}

void sigmoid_inplace(std::span<double> x) { k().sigmoid(x.data(), x.size()); }

void tanh_inplace(std::span<double> x) { k().tanh(x.data(), x.size()); }

void adam_update(std::span<double> params, std::span<double> m, std::span<double> v,
                 std::span<const double> grad, const AdamStep& step) {
  const auto n = params.size();
  if (m.size() != n || v.size() != n || grad.size() != n)
    throw std::invalid_argument("adam_update: size mismatch");
  k().adam_update(params.data(), m.data(), v.data(), grad.data(), n, step);
}

}  // namespace filtertwin::kernels
