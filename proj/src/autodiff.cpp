#include "choreo/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "choreo/errors.hpp"

namespace choreo::ad {

namespace {

constexpr double kFkGuard = 1e-9;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_bwd(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

std::vector<int> block_offsets(const std::vector<int>& rows) {
  std::vector<int> off(rows.size() + 1, 0);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] <= 0) throw BadShape("mask blocks must be non-empty");
    off[i + 1] = off[i] + rows[i];
  }
  return off;
}

// adjoint of gram_schmidt_6d; accumulates d(loss)/d(r6) into gx given the
// cached rotation columns and upstream GL = d(loss)/d(out)
void gs_backward(const double* r6, const Eigen::Map<const Mat3>& L,
                 const Mat3& GL, double* gx) {
  const Vec3 u(r6[0], r6[1], r6[2]);
  const Vec3 v(r6[3], r6[4], r6[5]);
  const Vec3 a = L.col(0), b = L.col(1);
  const double g2 = kFkGuard * kFkGuard;
  const double nu = std::sqrt(u.squaredNorm() + g2);
  const double t = a.dot(v);
  const Vec3 w = v - t * a;
  const double nw = std::sqrt(w.squaredNorm() + g2);

  Vec3 ga = GL.col(0), gb = GL.col(1);
  const Vec3 gc = GL.col(2);
  ga += b.cross(gc);
  gb += gc.cross(a);
  const Vec3 gw = (gb - b * b.dot(gb)) / nw;
  const Vec3 gv = gw - a * a.dot(gw);
  ga += -(a.dot(gw)) * v - t * gw;
  const Vec3 gu = (ga - a * a.dot(ga)) / nu;
  for (int i = 0; i < 3; ++i) {
    gx[i] += gu[i];
    gx[3 + i] += gv[i];
  }
}

// row softmax with the max subtracted; returns P, writes nothing else
// scalar exp and scalar row sums: Eigen's vectorized elementwise exp and row
// reductions can round a row differently depending on where it sits in the
// matrix, and softmax rows must depend on row contents alone so that the
// surrounding network stays bitwise permutation-equivariant
Mat softmax_rows(const Mat& S) {
  const Eigen::VectorXd rowmax = S.rowwise().maxCoeff();  // exact, no rounding
  Mat P(S.rows(), S.cols());
  for (Eigen::Index c = 0; c < S.cols(); ++c)
    for (Eigen::Index r = 0; r < S.rows(); ++r)
      P(r, c) = std::exp(S(r, c) - rowmax[r]);
  Eigen::VectorXd den = Eigen::VectorXd::Zero(S.rows());
  for (Eigen::Index c = 0; c < S.cols(); ++c)
    for (Eigen::Index r = 0; r < S.rows(); ++r) den[r] += P(r, c);
  return P.cwiseQuotient(den.replicate(1, P.cols()));
}

}  // namespace

double sorted_sum(std::vector<double>& vals) {
  std::sort(vals.begin(), vals.end());
  double s = 0.0;
  for (double x : vals) s += x;
  return s;
}

const Mat& Value::mat() const { return tape_->val(*this); }

const Mat& Tape::val(Value v) const {
  if (!v.valid() || v.tape_ != this) throw BadShape("value is not on this tape");
  return nodes_[v.id_].val;
}

const Mat& Tape::grad(Value v) const {
  if (!v.valid() || v.tape_ != this) throw BadShape("value is not on this tape");
  return nodes_[v.id_].grad;
}

int Tape::push(Node n) {
  if (!grad_enabled_) {
    n.needs_grad = false;
    n.aux.clear();
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::g(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

Value Tape::constant(Mat m) {
  Node n;
  n.op = Op::Constant;
  n.val = std::move(m);
  return wrap(push(std::move(n)));
}

Value Tape::input(Mat m) {
  Node n;
  n.op = Op::Input;
  n.val = std::move(m);
  n.needs_grad = true;
  return wrap(push(std::move(n)));
}

Value Tape::param(Mat* value, Mat* grad) {
  for (const auto& [ptr, id] : param_ids_)
    if (ptr == value) return wrap(id);
  Node n;
  n.op = Op::Param;
  n.val = *value;
  n.needs_grad = !params_frozen_;
  n.ext_grad = params_frozen_ ? nullptr : grad;
  const int id = push(std::move(n));
  param_ids_.emplace_back(value, id);
  return wrap(id);
}

Value Tape::add(Value a, Value b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("add: operand shapes differ");
  Node n;
  n.op = Op::Add;
  n.parents = {a.id_, b.id_};
  n.needs_grad = nodes_[a.id_].needs_grad || nodes_[b.id_].needs_grad;
  n.val = v(a.id_) + v(b.id_);
  return wrap(push(std::move(n)));
}

Value Tape::sub(Value a, Value b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("sub: operand shapes differ");
  Node n;
  n.op = Op::Sub;
  n.parents = {a.id_, b.id_};
  n.needs_grad = nodes_[a.id_].needs_grad || nodes_[b.id_].needs_grad;
  n.val = v(a.id_) - v(b.id_);
  return wrap(push(std::move(n)));
}

Value Tape::scale(Value a, double s) {
  Node n;
  n.op = Op::Scale;
  n.parents = {a.id_};
  n.scalar = s;
  n.needs_grad = nodes_[a.id_].needs_grad;
  n.val = s * v(a.id_);
  return wrap(push(std::move(n)));
}

Value Tape::mul(Value a, Value b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("mul: operand shapes differ");
  Node n;
  n.op = Op::Mul;
  n.parents = {a.id_, b.id_};
  n.needs_grad = nodes_[a.id_].needs_grad || nodes_[b.id_].needs_grad;
  n.val = v(a.id_).cwiseProduct(v(b.id_));
  return wrap(push(std::move(n)));
}

Value Tape::matmul(Value a, Value b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dims differ");
  Node n;
  n.op = Op::MatMul;
  n.parents = {a.id_, b.id_};
  n.needs_grad = nodes_[a.id_].needs_grad || nodes_[b.id_].needs_grad;
  n.val = v(a.id_) * v(b.id_);
  return wrap(push(std::move(n)));
}

Value Tape::add_row(Value a, Value row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeMismatch("add_row: need a 1 x cols row");
  Node n;
  n.op = Op::AddRow;
  n.parents = {a.id_, row.id_};
  n.needs_grad = nodes_[a.id_].needs_grad || nodes_[row.id_].needs_grad;
  n.val = v(a.id_).rowwise() + v(row.id_).row(0);
  return wrap(push(std::move(n)));
}

Value Tape::mul_row(Value a, Value row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeMismatch("mul_row: need a 1 x cols row");
  Node n;
  n.op = Op::MulRow;
  n.parents = {a.id_, row.id_};
  n.needs_grad = nodes_[a.id_].needs_grad || nodes_[row.id_].needs_grad;
  n.val = v(a.id_).cwiseProduct(v(row.id_).replicate(a.rows(), 1));
  return wrap(push(std::move(n)));
}

Value Tape::gelu(Value a) {
  Node n;
  n.op = Op::Gelu;
  n.parents = {a.id_};
  n.needs_grad = nodes_[a.id_].needs_grad;
  n.val = v(a.id_).unaryExpr([](double x) { return gelu_fwd(x); });
  return wrap(push(std::move(n)));
}

Value Tape::layer_norm(Value x, Value gain, Value bias, double eps) {
  const Eigen::Index d = x.cols();
  const Eigen::Index R = x.rows();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
    throw ShapeMismatch("layer_norm: gain/bias must be 1 x cols");
  const Mat& xv = v(x.id_);
  Node n;
  n.op = Op::LayerNorm;
  n.parents = {x.id_, gain.id_, bias.id_};
  n.needs_grad = nodes_[x.id_].needs_grad || nodes_[gain.id_].needs_grad ||
                 nodes_[bias.id_].needs_grad;
  // explicit scalar accumulation: Eigen's vectorized row reductions can
  // round a row differently depending on where it sits, and row statistics
  // must depend on row contents alone (dancer-permutation equivariance)
  Eigen::VectorXd mu(R), sig(R);
  for (Eigen::Index r = 0; r < R; ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) acc += xv(r, c);
    mu[r] = acc / static_cast<double>(d);
  }
  const Mat xc = xv.colwise() - mu;
  for (Eigen::Index r = 0; r < R; ++r) {
    double acc = 0.0;
    for (Eigen::Index c = 0; c < d; ++c) acc += xc(r, c) * xc(r, c);
    sig[r] = std::sqrt(acc / static_cast<double>(d) + eps);
  }
  Mat xhat = xc.cwiseQuotient(sig.replicate(1, d));
  n.val = xhat.cwiseProduct(v(gain.id_).replicate(R, 1)) +
          v(bias.id_).replicate(R, 1);
  if (grad_enabled_) {
    n.aux.resize(2);
    n.aux[0] = std::move(xhat);
    n.aux[1] = sig;
  }
  return wrap(push(std::move(n)));
}

Value Tape::attention(Value q, Value k, Value v_in, int n_heads,
                      const MaskSpec& mask) {
  const Mat& Q = v(q.id_);
  const Mat& K = v(k.id_);
  const Mat& V = v(v_in.id_);
  const Eigen::Index d = Q.cols();
  if (K.cols() != d || V.cols() != d)
    throw ShapeMismatch("attention: Q/K/V must share column count");
  if (K.rows() != V.rows()) throw ShapeMismatch("attention: K/V rows differ");
  if (n_heads < 1 || d % n_heads != 0)
    throw BadShape("attention: head count must divide model dim");
  const Eigen::Index dk = d / n_heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  const bool masked = mask.kind != MaskSpec::Kind::None;
  std::vector<int> off;
  if (masked) {
    off = block_offsets(mask.group_rows);
    if (off.back() != Q.rows() || Q.rows() != K.rows())
      throw ShapeMismatch("attention: mask blocks must cover all rows");
  }
  const int G = masked ? static_cast<int>(mask.group_rows.size()) : 0;

  Node n;
  n.op = Op::Attention;
  n.parents = {q.id_, k.id_, v_in.id_};
  n.needs_grad = nodes_[q.id_].needs_grad || nodes_[k.id_].needs_grad ||
                 nodes_[v_in.id_].needs_grad;
  n.i0 = n_heads;
  n.mask = mask;
  n.val = Mat::Zero(Q.rows(), d);

  std::vector<Mat> aux;
  std::vector<double> parts(std::max(G, 1));
  for (int h = 0; h < n_heads; ++h) {
    const auto Qh = Q.middleCols(h * dk, dk);
    const auto Kh = K.middleCols(h * dk, dk);
    const auto Vh = V.middleCols(h * dk, dk);
    if (mask.kind == MaskSpec::Kind::Local) {
      for (int g = 0; g < G; ++g) {
        const int r0 = off[g], rs = mask.group_rows[g];
        Mat P = softmax_rows((Qh.middleRows(r0, rs) *
                              Kh.middleRows(r0, rs).transpose()) * inv);
        n.val.block(r0, h * dk, rs, dk).noalias() = P * Vh.middleRows(r0, rs);
        if (grad_enabled_) aux.push_back(std::move(P));
      }
    } else if (mask.kind == MaskSpec::Kind::Global) {
      // cross-block reductions combine per-block partials in value-sorted
      // order so outputs are bitwise invariant to block (dancer) permutation
      const Eigen::Index R = Q.rows();
      const Mat S = (Qh * Kh.transpose()) * inv;
      const Eigen::VectorXd rowmax = S.rowwise().maxCoeff();
      // scalar std::exp per entry: Eigen's packet exp may round differently
      // on vector lanes vs scalar tails, which would break bitwise invariance
      Mat P(R, R);
      for (Eigen::Index c = 0; c < R; ++c)
        for (Eigen::Index r = 0; r < R; ++r)
          P(r, c) = std::exp(S(r, c) - rowmax[r]);
      for (Eigen::Index r = 0; r < R; ++r) {
        for (int g = 0; g < G; ++g) {
          double acc = 0.0;
          for (int j = 0; j < mask.group_rows[g]; ++j) acc += P(r, off[g] + j);
          parts[g] = acc;
        }
        P.row(r) /= sorted_sum(parts);
      }
      std::vector<Mat> M(G);
      for (int g = 0; g < G; ++g)
        M[g].noalias() = P.middleCols(off[g], mask.group_rows[g]) *
                         Vh.middleRows(off[g], mask.group_rows[g]);
      auto out = n.val.block(0, h * dk, R, dk);
      for (Eigen::Index r = 0; r < R; ++r) {
        for (Eigen::Index c = 0; c < dk; ++c) {
          for (int g = 0; g < G; ++g) parts[g] = M[g](r, c);
          out(r, c) = sorted_sum(parts);
        }
      }
      if (grad_enabled_) aux.push_back(std::move(P));
    } else {
      Mat P = softmax_rows((Qh * Kh.transpose()) * inv);
      n.val.middleCols(h * dk, dk).noalias() = P * Vh;
      if (grad_enabled_) aux.push_back(std::move(P));
    }
  }
  n.aux = std::move(aux);
  return wrap(push(std::move(n)));
}

Value Tape::group_modulate(Value h, Value s, Value b,
                           const std::vector<int>& group_rows, double eps) {
  const Mat& hv = v(h.id_);
  const Eigen::Index d = hv.cols();
  const Eigen::Index R = hv.rows();
  if (s.rows() != 1 || s.cols() != d || b.rows() != 1 || b.cols() != d)
    throw ShapeMismatch("group_modulate: s/b must be 1 x cols");
  const auto off = block_offsets(group_rows);
  if (off.back() != R)
    throw ShapeMismatch("group_modulate: blocks must cover all rows");
  const int G = static_cast<int>(group_rows.size());

  // channel stats over all rows; per-block partials combined in value-sorted
  // order for bitwise block-permutation invariance. Partials are accumulated
  // by explicit scalar loops: vectorized segment reductions group additions
  // by memory alignment, which changes when a block moves
  std::vector<double> parts(G);
  Eigen::RowVectorXd mu(d), sig(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double* col = hv.col(c).data();
    for (int g = 0; g < G; ++g) {
      double acc = 0.0;
      for (int r = 0; r < group_rows[g]; ++r) acc += col[off[g] + r];
      parts[g] = acc;
    }
    mu[c] = sorted_sum(parts) / static_cast<double>(R);
  }
  const Mat xc = hv.rowwise() - mu;
  for (Eigen::Index c = 0; c < d; ++c) {
    const double* col = xc.col(c).data();
    for (int g = 0; g < G; ++g) {
      double acc = 0.0;
      for (int r = 0; r < group_rows[g]; ++r)
        acc += col[off[g] + r] * col[off[g] + r];
      parts[g] = acc;
    }
    sig[c] = std::sqrt(sorted_sum(parts) / static_cast<double>(R) + eps);
  }
  Mat hhat = xc.cwiseQuotient(sig.replicate(R, 1));

  Node n;
  n.op = Op::GroupModulate;
  n.parents = {h.id_, s.id_, b.id_};
  n.needs_grad = nodes_[h.id_].needs_grad || nodes_[s.id_].needs_grad ||
                 nodes_[b.id_].needs_grad;
  n.val = hhat.cwiseProduct(v(s.id_).replicate(R, 1)) + v(b.id_).replicate(R, 1);
  if (grad_enabled_) {
    n.aux.resize(2);
    n.aux[0] = std::move(hhat);
    n.aux[1] = sig;
  }
  return wrap(push(std::move(n)));
}

Value Tape::concat_rows(Value a, Value b) {
  if (a.cols() != b.cols()) throw ShapeMismatch("concat_rows: column mismatch");
  Node n;
  n.op = Op::ConcatRows;
  n.parents = {a.id_, b.id_};
  n.needs_grad = nodes_[a.id_].needs_grad || nodes_[b.id_].needs_grad;
  n.val.resize(a.rows() + b.rows(), a.cols());
  n.val.topRows(a.rows()) = v(a.id_);
  n.val.bottomRows(b.rows()) = v(b.id_);
  n.i0 = static_cast<int>(a.rows());
  return wrap(push(std::move(n)));
}

Value Tape::slice_rows(Value a, int start, int len) {
  if (start < 0 || len < 1 || start + len > a.rows())
    throw BadShape("slice_rows: range out of bounds");
  Node n;
  n.op = Op::SliceRows;
  n.parents = {a.id_};
  n.needs_grad = nodes_[a.id_].needs_grad;
  n.i0 = start;
  n.i1 = len;
  n.val = v(a.id_).middleRows(start, len);
  return wrap(push(std::move(n)));
}

Value Tape::slice_cols(Value a, int start, int len) {
  if (start < 0 || len < 1 || start + len > a.cols())
    throw BadShape("slice_cols: range out of bounds");
  Node n;
  n.op = Op::SliceCols;
  n.parents = {a.id_};
  n.needs_grad = nodes_[a.id_].needs_grad;
  n.i0 = start;
  n.i1 = len;
  n.val = v(a.id_).middleCols(start, len);
  return wrap(push(std::move(n)));
}

Value Tape::mean_rows(Value a) {
  Node n;
  n.op = Op::MeanRows;
  n.parents = {a.id_};
  n.needs_grad = nodes_[a.id_].needs_grad;
  n.val = a.mat().colwise().mean();
  return wrap(push(std::move(n)));
}

Value Tape::mse(Value a, Value b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch("mse: operand shapes differ");
  Node n;
  n.op = Op::Mse;
  n.parents = {a.id_, b.id_};
  n.needs_grad = nodes_[a.id_].needs_grad || nodes_[b.id_].needs_grad;
  n.val = Mat::Constant(1, 1, (v(a.id_) - v(b.id_)).squaredNorm() /
                                  static_cast<double>(v(a.id_).size()));
  return wrap(push(std::move(n)));
}

Value Tape::frame_diff(Value x, int n_frames) {
  const Eigen::Index R = x.rows();
  if (n_frames < 2 || R % n_frames != 0)
    throw BadShape("frame_diff: rows must be a multiple of n_frames >= 2");
  const Eigen::Index B = R / n_frames;
  Node n;
  n.op = Op::FrameDiff;
  n.parents = {x.id_};
  n.needs_grad = nodes_[x.id_].needs_grad;
  n.i0 = n_frames;
  n.val.resize(B * (n_frames - 1), x.cols());
  const Mat& xv = v(x.id_);
  for (Eigen::Index b = 0; b < B; ++b)
    n.val.middleRows(b * (n_frames - 1), n_frames - 1) =
        xv.middleRows(b * n_frames + 1, n_frames - 1) -
        xv.middleRows(b * n_frames, n_frames - 1);
  return wrap(push(std::move(n)));
}

Value Tape::fk(Value x, const Skeleton& skel) {
  const Mat& xv = v(x.id_);
  if (xv.cols() != kPoseDim) throw BadShape("fk: rows must be 147-dim poses");
  const Eigen::Index R = xv.rows();
  Node n;
  n.op = Op::Fk;
  n.parents = {x.id_};
  n.needs_grad = nodes_[x.id_].needs_grad;
  n.skel = &skel;
  n.val.resize(R, 3 * kNumJoints);
  const bool cache = grad_enabled_;
  if (cache) {
    n.aux.resize(2);
    n.aux[0].resize(9 * kNumJoints, R);  // local rotations, one column per row
    n.aux[1].resize(9 * kNumJoints, R);  // global rotations
  }
  Eigen::Matrix<double, kPoseDim, 1> row;
  Eigen::Matrix<double, 3 * kNumJoints, 1> out;
  for (Eigen::Index r = 0; r < R; ++r) {
    row = xv.row(r).transpose();
    detail::fk_flat(row.data(), skel, kFkGuard, out.data(),
                    cache ? n.aux[0].col(r).data() : nullptr,
                    cache ? n.aux[1].col(r).data() : nullptr);
    n.val.row(r) = out.transpose();
  }
  return wrap(push(std::move(n)));
}

Value Tape::foot_vel_mean(Value vel, const Skeleton& skel,
                          const std::vector<std::pair<int, int>>& mask) {
  const Mat& fv = v(vel.id_);
  if (fv.cols() != 3 * kNumJoints)
    throw BadShape("foot_vel_mean: expected 72 position columns");
  Node n;
  n.op = Op::FootVelMean;
  n.parents = {vel.id_};
  n.needs_grad = nodes_[vel.id_].needs_grad;
  n.skel = &skel;
  n.foot_mask = mask;
  double total = 0.0;
  for (const auto& [r, side] : mask) {
    if (r < 0 || r >= fv.rows() || side < 0 || side > 1)
      throw BadShape("foot_vel_mean: mask entry out of range");
    const int j = side == 0 ? skel.left_foot_index : skel.right_foot_index;
    total += std::sqrt(fv.row(r).segment<3>(3 * j).squaredNorm() + 1e-24);
  }
  n.val = Mat::Constant(1, 1, mask.empty() ? 0.0 : total / mask.size());
  return wrap(push(std::move(n)));
}

Value Tape::nce(const std::vector<Value>& scores) {
  if (scores.empty()) throw BadShape("nce: need at least one score");
  Node n;
  n.op = Op::Nce;
  std::vector<double> s(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].rows() != 1 || scores[i].cols() != 1)
      throw ShapeMismatch("nce: scores must be 1 x 1");
    n.parents.push_back(scores[i].id_);
    n.needs_grad = n.needs_grad || nodes_[scores[i].id_].needs_grad;
    s[i] = v(scores[i].id_)(0, 0);
  }
  const double m = *std::max_element(s.begin(), s.end());
  double acc = 0.0;
  for (double x : s) acc += std::exp(x - m);
  const double lse = m + std::log(acc);
  n.val = Mat::Constant(1, 1, lse - s[0]);
  n.scalar = lse;
  return wrap(push(std::move(n)));
}

void Tape::backward(Value loss) {
  if (!loss.valid() || loss.tape_ != this)
    throw BadShape("backward: loss is not on this tape");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ShapeMismatch("backward: loss must be 1 x 1");
  if (!grad_enabled_) throw BadConfig("backward on a no-grad tape");
  g(loss.id_) = Mat::Ones(1, 1);
  for (int id = loss.id_; id >= 0; --id) {
    const Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    backward_node(id);
  }
  for (const auto& [ptr, id] : param_ids_) {
    (void)ptr;
    Node& n = nodes_[id];
    if (n.grad.size() != 0 && n.ext_grad) {
      if (n.ext_grad->rows() != n.grad.rows() ||
          n.ext_grad->cols() != n.grad.cols())
        throw ShapeMismatch("param gradient buffer shape mismatch");
      *n.ext_grad += n.grad;
    }
  }
}

void Tape::backward_node(int id) {
  Node& n = nodes_[id];
  const Mat& G = n.grad;
  auto wants = [&](int slot) { return nodes_[n.parents[slot]].needs_grad; };
  switch (n.op) {
    case Op::Constant:
    case Op::Input:
    case Op::Param:
      return;
    case Op::Add:
      if (wants(0)) g(n.parents[0]) += G;
      if (wants(1)) g(n.parents[1]) += G;
      return;
    case Op::Sub:
      if (wants(0)) g(n.parents[0]) += G;
      if (wants(1)) g(n.parents[1]) -= G;
      return;
    case Op::Scale:
      if (wants(0)) g(n.parents[0]) += n.scalar * G;
      return;
    case Op::Mul:
      if (wants(0)) g(n.parents[0]) += G.cwiseProduct(v(n.parents[1]));
      if (wants(1)) g(n.parents[1]) += G.cwiseProduct(v(n.parents[0]));
      return;
    case Op::MatMul:
      if (wants(0)) g(n.parents[0]).noalias() += G * v(n.parents[1]).transpose();
      if (wants(1)) g(n.parents[1]).noalias() += v(n.parents[0]).transpose() * G;
      return;
    case Op::AddRow:
      if (wants(0)) g(n.parents[0]) += G;
      if (wants(1)) g(n.parents[1]) += G.colwise().sum();
      return;
    case Op::MulRow:
      if (wants(0))
        g(n.parents[0]) += G.cwiseProduct(v(n.parents[1]).replicate(G.rows(), 1));
      if (wants(1))
        g(n.parents[1]) += G.cwiseProduct(v(n.parents[0])).colwise().sum();
      return;
    case Op::Gelu: {
      if (!wants(0)) return;
      const Mat& x = v(n.parents[0]);
      g(n.parents[0]) +=
          G.cwiseProduct(x.unaryExpr([](double t) { return gelu_bwd(t); }));
      return;
    }
    case Op::LayerNorm: {
      const Mat& xhat = n.aux[0];
      const Eigen::VectorXd sig = n.aux[1].col(0);
      const Eigen::Index d = xhat.cols();
      if (wants(1)) g(n.parents[1]) += G.cwiseProduct(xhat).colwise().sum();
      if (wants(2)) g(n.parents[2]) += G.colwise().sum();
      if (!wants(0)) return;
      const Mat dz = G.cwiseProduct(v(n.parents[1]).replicate(G.rows(), 1));
      const Eigen::VectorXd m1 = dz.rowwise().mean();
      const Eigen::VectorXd m2 = dz.cwiseProduct(xhat).rowwise().mean();
      Mat dx = dz - m1.replicate(1, d) - xhat.cwiseProduct(m2.replicate(1, d));
      g(n.parents[0]) += dx.cwiseQuotient(sig.replicate(1, d));
      return;
    }
    case Op::Attention: {
      const int n_heads = n.i0;
      const Mat& Q = v(n.parents[0]);
      const Mat& K = v(n.parents[1]);
      const Mat& V = v(n.parents[2]);
      const Eigen::Index dk = Q.cols() / n_heads;
      const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
      std::vector<int> off;
      int Gn = 0;
      if (n.mask.kind != MaskSpec::Kind::None) {
        off = block_offsets(n.mask.group_rows);
        Gn = static_cast<int>(n.mask.group_rows.size());
      }
      size_t ai = 0;
      for (int h = 0; h < n_heads; ++h) {
        const auto dO = G.middleCols(h * dk, dk);
        if (n.mask.kind == MaskSpec::Kind::Local) {
          for (int blk = 0; blk < Gn; ++blk) {
            const int r0 = off[blk], rs = n.mask.group_rows[blk];
            const Mat& P = n.aux[ai++];
            const Mat dOb = dO.middleRows(r0, rs);
            if (wants(2))
              g(n.parents[2]).block(r0, h * dk, rs, dk).noalias() +=
                  P.transpose() * dOb;
            if (!wants(0) && !wants(1)) continue;
            const Mat dP = dOb * V.block(r0, h * dk, rs, dk).transpose();
            const Eigen::VectorXd rs_sum = P.cwiseProduct(dP).rowwise().sum();
            const Mat dS = P.cwiseProduct(dP.colwise() - rs_sum);
            if (wants(0))
              g(n.parents[0]).block(r0, h * dk, rs, dk).noalias() +=
                  inv * (dS * K.block(r0, h * dk, rs, dk));
            if (wants(1))
              g(n.parents[1]).block(r0, h * dk, rs, dk).noalias() +=
                  inv * (dS.transpose() * Q.block(r0, h * dk, rs, dk));
          }
        } else {
          const Mat& P = n.aux[ai++];
          if (wants(2))
            g(n.parents[2]).middleCols(h * dk, dk).noalias() +=
                P.transpose() * dO;
          if (!wants(0) && !wants(1)) continue;
          const Mat dP = dO * V.middleCols(h * dk, dk).transpose();
          const Eigen::VectorXd rs_sum = P.cwiseProduct(dP).rowwise().sum();
          const Mat dS = P.cwiseProduct(dP.colwise() - rs_sum);
          if (wants(0))
            g(n.parents[0]).middleCols(h * dk, dk).noalias() +=
                inv * (dS * K.middleCols(h * dk, dk));
          if (wants(1))
            g(n.parents[1]).middleCols(h * dk, dk).noalias() +=
                inv * (dS.transpose() * Q.middleCols(h * dk, dk));
        }
      }
      return;
    }
    case Op::GroupModulate: {
      const Mat& hhat = n.aux[0];
      const Eigen::RowVectorXd sig = n.aux[1].row(0);
      const Eigen::Index R = hhat.rows();
      if (wants(1)) g(n.parents[1]) += G.cwiseProduct(hhat).colwise().sum();
      if (wants(2)) g(n.parents[2]) += G.colwise().sum();
      if (!wants(0)) return;
      const Mat dz = G.cwiseProduct(v(n.parents[1]).replicate(R, 1));
      const Eigen::RowVectorXd m1 = dz.colwise().sum() / static_cast<double>(R);
      const Eigen::RowVectorXd m2 =
          dz.cwiseProduct(hhat).colwise().sum() / static_cast<double>(R);
      Mat dx = dz - m1.replicate(R, 1) - hhat.cwiseProduct(m2.replicate(R, 1));
      g(n.parents[0]) += dx.cwiseQuotient(sig.replicate(R, 1));
      return;
    }
    case Op::ConcatRows: {
      const int ra = n.i0;
      if (wants(0)) g(n.parents[0]) += G.topRows(ra);
      if (wants(1)) g(n.parents[1]) += G.bottomRows(G.rows() - ra);
      return;
    }
    case Op::SliceRows:
      if (wants(0)) g(n.parents[0]).middleRows(n.i0, n.i1) += G;
      return;
    case Op::SliceCols:
      if (wants(0)) g(n.parents[0]).middleCols(n.i0, n.i1) += G;
      return;
    case Op::MeanRows: {
      if (!wants(0)) return;
      const double R = static_cast<double>(v(n.parents[0]).rows());
      g(n.parents[0]).rowwise() += (G.row(0) / R).eval();
      return;
    }
    case Op::Mse: {
      const Mat diff = v(n.parents[0]) - v(n.parents[1]);
      const double c =
          2.0 * G(0, 0) / static_cast<double>(v(n.parents[0]).size());
      if (wants(0)) g(n.parents[0]) += c * diff;
      if (wants(1)) g(n.parents[1]) -= c * diff;
      return;
    }
    case Op::FrameDiff: {
      if (!wants(0)) return;
      const int T = n.i0;
      const Eigen::Index B = v(n.parents[0]).rows() / T;
      Mat& dx = g(n.parents[0]);
      for (Eigen::Index b = 0; b < B; ++b) {
        dx.middleRows(b * T + 1, T - 1) += G.middleRows(b * (T - 1), T - 1);
        dx.middleRows(b * T, T - 1) -= G.middleRows(b * (T - 1), T - 1);
      }
      return;
    }
    case Op::Fk: {
      if (!wants(0)) return;
      const Mat& x = v(n.parents[0]);
      const Skeleton& skel = *n.skel;
      Mat& dx = g(n.parents[0]);
      Eigen::Matrix<double, kPoseDim, 1> xrow, gxrow;
      std::array<Vec3, kNumJoints> Gp;
      std::array<Mat3, kNumJoints> GR;
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        xrow = x.row(r).transpose();
        gxrow.setZero();
        const double* Lc = n.aux[0].col(r).data();
        const double* Rc = n.aux[1].col(r).data();
        for (int j = 0; j < kNumJoints; ++j) {
          Gp[j] = G.row(r).segment<3>(3 * j).transpose();
          GR[j].setZero();
        }
        for (int j = kNumJoints - 1; j >= 1; --j) {
          const int par = skel.parent_index[j];
          const Eigen::Map<const Mat3> Lj(Lc + 9 * j);
          const Eigen::Map<const Mat3> Rpar(Rc + 9 * par);
          Gp[par] += Gp[j];
          GR[par].noalias() += Gp[j] * skel.rest_offsets[j].transpose();
          GR[par].noalias() += GR[j] * Lj.transpose();
          const Mat3 GL = Rpar.transpose() * GR[j];
          gs_backward(xrow.data() + 3 + 6 * j, Lj, GL, gxrow.data() + 3 + 6 * j);
        }
        const Eigen::Map<const Mat3> L0(Lc);
        gs_backward(xrow.data() + 3, L0, GR[0], gxrow.data() + 3);
        gxrow.head<3>() += Gp[0];
        dx.row(r) += gxrow.transpose();
      }
      return;
    }
    case Op::FootVelMean: {
      if (!wants(0) || n.foot_mask.empty()) return;
      const Mat& fv = v(n.parents[0]);
      Mat& dx = g(n.parents[0]);
      const double c = G(0, 0) / static_cast<double>(n.foot_mask.size());
      for (const auto& [r, side] : n.foot_mask) {
        const int j =
            side == 0 ? n.skel->left_foot_index : n.skel->right_foot_index;
        const Vec3 vseg = fv.row(r).segment<3>(3 * j).transpose();
        const double norm = std::sqrt(vseg.squaredNorm() + 1e-24);
        dx.row(r).segment<3>(3 * j) += (c / norm) * vseg.transpose();
      }
      return;
    }
    case Op::Nce: {
      const double lse = n.scalar;
      const double g0 = G(0, 0);
      for (size_t i = 0; i < n.parents.size(); ++i) {
        if (!nodes_[n.parents[i]].needs_grad) continue;
        const double p = std::exp(v(n.parents[i])(0, 0) - lse);
        g(n.parents[i])(0, 0) += g0 * (p - (i == 0 ? 1.0 : 0.0));
      }
      return;
    }
  }
}

}  // namespace choreo::ad
