#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "choreo/motion.hpp"

namespace choreo::ad {

using Mat = Eigen::MatrixXd;

// attention masking over packed rows (dancer-major blocks)
struct MaskSpec {
  enum class Kind { None, Local, Global };
  Kind kind = Kind::None;
  std::vector<int> group_rows;  // rows per block; required for Local/Global

  static MaskSpec none() { return {}; }
  static MaskSpec local(std::vector<int> rows) {
    return {Kind::Local, std::move(rows)};
  }
  static MaskSpec global(std::vector<int> rows) {
    return {Kind::Global, std::move(rows)};
  }
};

class Tape;

class Value {
 public:
  Value() = default;
  bool valid() const { return tape_ != nullptr; }
  const Mat& mat() const;
  Eigen::Index rows() const { return mat().rows(); }
  Eigen::Index cols() const { return mat().cols(); }

 private:
  friend class Tape;
  Value(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// reverse-mode tape over dense double matrices. Nodes are appended in
// topological order; backward() walks them once in reverse. Cross-dancer
// reductions in global attention and group modulation combine per-block
// partials in value-sorted order so forward outputs are bitwise independent
// of dancer order.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  // frozen params enter as plain constants; gradients w.r.t. inputs still
  // flow but nothing is accumulated into parameter buffers
  void freeze_params(bool f) { params_frozen_ = f; }

  Value constant(Mat m);
  Value input(Mat m);  // differentiable leaf; query grad() after backward
  // leaf bound to external storage; backward accumulates into *grad
  Value param(Mat* value, Mat* grad);

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value scale(Value a, double s);
  Value mul(Value a, Value b);  // elementwise
  Value matmul(Value a, Value b);
  Value add_row(Value a, Value row);  // broadcast 1 x d over rows
  Value mul_row(Value a, Value row);
  Value linear(Value x, Value w, Value b) { return add_row(matmul(x, w), b); }
  Value gelu(Value a);
  Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5);
  // multi-head softmax attention, concatenated heads (no output projection)
  Value attention(Value q, Value k, Value v, int n_heads, const MaskSpec& mask);
  // channel standardization over all rows + affine from s/b (1 x d each)
  Value group_modulate(Value h, Value s, Value b,
                       const std::vector<int>& group_rows, double eps = 1e-5);
  Value concat_rows(Value a, Value b);
  Value slice_rows(Value a, int start, int n);
  Value slice_cols(Value a, int start, int n);
  Value mean_rows(Value a);  // 1 x d
  Value mse(Value a, Value b);  // 1 x 1
  // per-block temporal difference; rows = blocks * n_frames
  Value frame_diff(Value x, int n_frames);
  // rows x 147 -> rows x 72 joint positions (guarded Gram-Schmidt, eps 1e-9)
  Value fk(Value x, const Skeleton& skel);
  // mean over masked (row, side) entries of the foot-velocity norm; vel is a
  // frame_diff over FK positions. side: 0 = left foot, 1 = right foot
  Value foot_vel_mean(Value vel, const Skeleton& skel,
                      const std::vector<std::pair<int, int>>& mask);
  // InfoNCE over 1x1 scores; scores[0] is the positive
  Value nce(const std::vector<Value>& scores);

  void backward(Value loss);  // loss must be 1 x 1

  const Mat& val(Value v) const;
  const Mat& grad(Value v) const;  // zero-sized if the node got no gradient

  size_t size() const { return nodes_.size(); }

 private:
  enum class Op {
    Constant, Input, Param, Add, Sub, Scale, Mul, MatMul, AddRow, MulRow,
    Gelu, LayerNorm, Attention, GroupModulate, ConcatRows, SliceRows,
    SliceCols, MeanRows, Mse, FrameDiff, Fk, FootVelMean, Nce
  };

  struct Node {
    Mat val;
    Mat grad;
    Op op = Op::Constant;
    bool needs_grad = false;
    std::vector<int> parents;
    double scalar = 0.0;
    int i0 = 0, i1 = 0;
    MaskSpec mask;
    const Skeleton* skel = nullptr;
    std::vector<std::pair<int, int>> foot_mask;
    std::vector<Mat> aux;
    Mat* ext_grad = nullptr;
  };

  int push(Node n);
  Value wrap(int id) { return Value(this, id); }
  const Mat& v(int id) const { return nodes_[id].val; }
  Mat& g(int id);
  void backward_node(int id);

  std::vector<Node> nodes_;
  std::vector<std::pair<const Mat*, int>> param_ids_;
  bool grad_enabled_;
  bool params_frozen_ = false;
};

// sums values in ascending order; bitwise-invariant to input permutation
double sorted_sum(std::vector<double>& vals);

}  // namespace choreo::ad
