#pragma once

// Dense double-precision kernels used by the regressors, the optimizer and the
// rolling window statistics. Each kernel has a scalar reference implementation
// and an AVX2/FMA variant; the variant is chosen once at startup from CPUID and
// can be overridden with FILTERTWIN_ISA=scalar|avx2 or force_isa().

#include <cstddef>
#include <span>
#include <string_view>

namespace filtertwin::kernels {

enum class Isa { scalar, avx2 };

std::string_view to_string(Isa isa);

/// True when the variant was compiled in and the CPU supports it.
bool isa_available(Isa isa);
Isa active_isa();
/// Selects the kernel variant for the whole process. Throws if unavailable.
void force_isa(Isa isa);

/// Row-major matrix view.
struct ConstMatrix {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct MutableMatrix {
  std::span<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> x);
/// Sum of (x_i - center)^2.
double sum_sq_dev(std::span<const double> x, double center);

/// y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

/// y = W x + bias (bias may be empty)
void gemv(ConstMatrix w, std::span<const double> x, std::span<const double> bias, std::span<double> y);

/// out += W^T v
void gemv_t_acc(ConstMatrix w, std::span<const double> v, std::span<double> out);

/// W += u x^T
void ger_acc(MutableMatrix w, std::span<const double> u, std::span<const double> x);

/// C += A B with A (m x k), B (k x n), C (m x n).
void gemm_nn_acc(ConstMatrix a, ConstMatrix b, MutableMatrix c);
/// C += A^T B with A stored (k x m).
void gemm_tn_acc(ConstMatrix a, ConstMatrix b, MutableMatrix c);
/// C += A B^T with B stored (n x k).
void gemm_nt_acc(ConstMatrix a, ConstMatrix b, MutableMatrix c);

/// In-place logistic function 1 / (1 + exp(-x)).
void sigmoid_inplace(std::span<double> x);
/// In-place hyperbolic tangent.
void tanh_inplace(std::span<double> x);

struct AdamStep {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double bias_correction1 = 1.0;  // 1 - beta1^t
  double bias_correction2 = 1.0;  // 1 - beta2^t
};

/// One Adam update over a flat parameter block.
void adam_update(std::span<double> params, std::span<double> m, std::span<double> v,
                 std::span<const double> grad, const AdamStep& step);

namespace detail {

struct KernelTable {
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*sum_sq_dev)(const double*, std::size_t, double);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*gemv)(const double*, std::size_t, std::size_t, const double*, const double*, double*);
  void (*gemv_t_acc)(const double*, std::size_t, std::size_t, const double*, double*);
  void (*ger_acc)(double*, std::size_t, std::size_t, const double*, const double*);
  // (a, b, c, m, k, n)
  void (*gemm_nn_acc)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
  void (*gemm_tn_acc)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
  void (*gemm_nt_acc)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
  void (*adam_update)(double*, double*, double*, const double*, std::size_t, const AdamStep&);
  void (*sigmoid)(double*, std::size_t);
  void (*tanh)(double*, std::size_t);
};

const KernelTable& scalar_table();
/// nullptr when the AVX2 variant was not compiled in.
const KernelTable* avx2_table();

}  // namespace detail

}  // namespace filtertwin::kernels
