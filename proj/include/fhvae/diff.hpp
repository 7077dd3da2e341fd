// Copyright (c) 2026 The contrastive-fhvae Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records a fixed graph of primitive operations. Shapes are checked
// while the graph is built; values are computed by forward(), which binds the
// named inputs, and adjoints by backward(). Parameters are leaves that read
// Param::value on every forward pass and accumulate into Param::grad on every
// backward pass, so the same tape can be re-run after a parameter is nudged
// (this is how grad_check works).
//
// Broadcasting is limited to add_row(): a 1xC row added to every row of an
// RxC matrix. Everything else requires exact shapes.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fhvae/error.hpp"

namespace fhvae::diff {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using Bindings = std::map<std::string, Matrix>;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

enum class Op : std::uint8_t {
  kInput,
  kConstant,
  kParam,
  kFrozen,
  kSampledNormal,
  kMatMul,
  kAddRow,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kTanh,
  kSigmoid,
  kSoftplus,
  kExp,
  kLog,
  kSquare,
  kSum,
  kMean,
  kConcatCols,
  kConcatRows,
  kSliceCols,
  kSliceRows,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kParam: return "param";
    case Op::kFrozen: return "frozen";
    case Op::kSampledNormal: return "sampled_normal";
    case Op::kMatMul: return "matmul";
    case Op::kAddRow: return "add_row";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSquare: return "square";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kConcatCols: return "concat_cols";
    case Op::kConcatRows: return "concat_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSliceRows: return "slice_rows";
  }
  return "?";
}

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(std::string name, Index rows, Index cols) {
    Node n = make(Op::kInput, rows, cols);
    n.label = std::move(name);
    return push(std::move(n));
  }

  Var constant(Matrix value, std::string label = {}) {
    Node n = make(Op::kConstant, value.rows(), value.cols());
    n.label = std::move(label);
    n.data = std::move(value);
    return push(std::move(n));
  }

  Var param(Param& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node n = make(Op::kParam, p.value.rows(), p.value.cols());
    n.label = p.name;
    n.param = &p;
    n.frozen = &p;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  // Reads a parameter without tracking its gradient.
  Var frozen(const Param& p) {
    Node n = make(Op::kFrozen, p.value.rows(), p.value.cols());
    n.label = p.name;
    n.frozen = &p;
    return push(std::move(n));
  }

  // Fresh standard-normal draws on every forward pass. Such a tape is not
  // deterministic, and grad_check refuses it.
  Var sampled_normal(Index rows, Index cols, std::uint64_t seed) {
    Node n = make(Op::kSampledNormal, rows, cols);
    n.label = "sampled_normal";
    n.engine.seed(seed);
    return push(std::move(n));
  }

  void label(Var v, std::string text) { node(v).label = std::move(text); }

  Var unary(Op op, Var a, double scalar = 0.0) {
    check_var(a);
    Node n = make(op, rows(a), cols(a));
    n.a = a.id;
    n.scalar = scalar;
    return push(std::move(n));
  }

  Var binary(Op op, Var a, Var b) {
    check_var(a);
    check_var(b);
    Node n;
    switch (op) {
      case Op::kMatMul:
        if (cols(a) != rows(b)) shape_error(op, a, b);
        n = make(op, rows(a), cols(b));
        break;
      case Op::kAddRow:
        if (rows(b) != 1 || cols(b) != cols(a)) shape_error(op, a, b);
        n = make(op, rows(a), cols(a));
        break;
      default:
        if (rows(a) != rows(b) || cols(a) != cols(b)) shape_error(op, a, b);
        n = make(op, rows(a), cols(a));
        break;
    }
    n.a = a.id;
    n.b = b.id;
    return push(std::move(n));
  }

  Var reduce(Op op, Var a) {
    check_var(a);
    Node n = make(op, 1, 1);
    n.a = a.id;
    return push(std::move(n));
  }

  Var concat(Op op, const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError(describe_new(op) + ": nothing to concatenate");
    Index r = 0, c = 0;
    for (const Var& p : parts) check_var(p);
    if (op == Op::kConcatCols) {
      r = rows(parts[0]);
      for (const Var& p : parts) {
        if (rows(p) != r) shape_error(op, parts[0], p);
        c += cols(p);
      }
    } else {
      c = cols(parts[0]);
      for (const Var& p : parts) {
        if (cols(p) != c) shape_error(op, parts[0], p);
        r += rows(p);
      }
    }
    Node n = make(op, r, c);
    for (const Var& p : parts) n.many.push_back(p.id);
    return push(std::move(n));
  }

  Var slice(Op op, Var a, Index offset, Index length) {
    check_var(a);
    const Index extent = op == Op::kSliceCols ? cols(a) : rows(a);
    if (offset < 0 || length <= 0 || offset + length > extent) {
      std::ostringstream os;
      os << describe_new(op) << ": range [" << offset << ", " << offset + length
         << ") outside extent " << extent << " of " << describe(a.id);
      throw ShapeError(os.str());
    }
    Node n = op == Op::kSliceCols ? make(op, rows(a), length) : make(op, length, cols(a));
    n.a = a.id;
    n.offset = offset;
    return push(std::move(n));
  }

  void forward(const Bindings& inputs) {
    bindings_ = inputs;
    forward();
  }

  // Re-runs with the most recent bindings.
  void forward() {
    values_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      evaluate(static_cast<int>(i));
      if (!values_[i].allFinite()) {
        throw NumericError("non-finite value at " + describe(static_cast<int>(i)));
      }
    }
    forwarded_ = true;
  }

  void backward(Var seed) {
    check_var(seed);
    if (!forwarded_) throw std::logic_error("backward() called before forward()");
    if (rows(seed) != 1 || cols(seed) != 1)
      throw ShapeError("backward seed " + describe(seed.id) + " is not a scalar");
    adjoints_.assign(seed.id + 1, Matrix());
    for (int i = 0; i <= seed.id; ++i) adjoints_[i].setZero(nodes_[i].rows, nodes_[i].cols);
    adjoints_[seed.id](0, 0) = 1.0;
    for (int i = seed.id; i >= 0; --i) propagate(i);
    for (int i = 0; i <= seed.id; ++i) {
      if (nodes_[i].op == Op::kParam) nodes_[i].param->grad += adjoints_[i];
    }
  }

  const Matrix& value(Var v) const {
    if (!forwarded_) throw std::logic_error("value() read before forward()");
    return values_.at(v.id);
  }
  double scalar(Var v) const { return value(v)(0, 0); }

  // Adjoint from the most recent backward pass.
  const Matrix& adjoint(Var v) const { return adjoints_.at(v.id); }

  Index rows(Var v) const { return nodes_.at(v.id).rows; }
  Index cols(Var v) const { return nodes_.at(v.id).cols; }
  std::size_t size() const { return nodes_.size(); }
  bool forwarded() const { return forwarded_; }
  bool deterministic() const {
    for (const Node& n : nodes_)
      if (n.op == Op::kSampledNormal) return false;
    return true;
  }

  std::string describe(int id) const {
    const Node& n = nodes_.at(id);
    std::ostringstream os;
    os << "node #" << id << " (" << op_name(n.op);
    if (!n.label.empty()) os << " '" << n.label << "'";
    os << ", " << n.rows << "x" << n.cols << ")";
    return os.str();
  }

 private:
  struct Node {
    Op op = Op::kConstant;
    Index rows = 0;
    Index cols = 0;
    int a = -1;
    int b = -1;
    std::vector<int> many;
    double scalar = 0.0;
    Index offset = 0;
    Param* param = nullptr;
    const Param* frozen = nullptr;
    Matrix data;
    std::mt19937_64 engine;
    std::string label;
  };

  static Node make(Op op, Index r, Index c) {
    Node n;
    n.op = op;
    n.rows = r;
    n.cols = c;
    return n;
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    forwarded_ = false;
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  Node& node(Var v) { return nodes_.at(v.id); }

  void check_var(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("variable does not belong to this tape");
  }

  std::string describe_new(Op op) const {
    std::ostringstream os;
    os << "node #" << nodes_.size() << " (" << op_name(op) << ")";
    return os.str();
  }

  [[noreturn]] void shape_error(Op op, Var a, Var b) const {
    throw ShapeError(describe_new(op) + ": incompatible operands " + describe(a.id) + " and " +
                     describe(b.id));
  }

  void evaluate(int i) {
    Node& n = nodes_[i];
    Matrix& out = values_[i];
    const auto in = [&](int id) -> const Matrix& { return values_[id]; };
    switch (n.op) {
      case Op::kInput: {
        auto it = bindings_.find(n.label);
        if (it == bindings_.end()) throw DataError("input '" + n.label + "' is not bound");
        if (it->second.rows() != n.rows || it->second.cols() != n.cols) {
          std::ostringstream os;
          os << describe(i) << ": bound value is " << it->second.rows() << "x"
             << it->second.cols();
          throw ShapeError(os.str());
        }
        out = it->second;
        break;
      }
      case Op::kConstant: out = n.data; break;
      case Op::kParam:
      case Op::kFrozen:
        if (n.frozen->value.rows() != n.rows || n.frozen->value.cols() != n.cols)
          throw ShapeError(describe(i) + ": parameter was resized after the tape was built");
        out = n.frozen->value;
        break;
      case Op::kSampledNormal: {
        std::normal_distribution<double> normal;
        out.resize(n.rows, n.cols);
        for (Index k = 0; k < out.size(); ++k) out.data()[k] = normal(n.engine);
        break;
      }
      case Op::kMatMul: out.noalias() = in(n.a) * in(n.b); break;
      case Op::kAddRow: out = in(n.a).rowwise() + in(n.b).row(0); break;
      case Op::kAdd: out = in(n.a) + in(n.b); break;
      case Op::kSub: out = in(n.a) - in(n.b); break;
      case Op::kMul: out = in(n.a).cwiseProduct(in(n.b)); break;
      case Op::kScale: out = in(n.a) * n.scalar; break;
      case Op::kAddScalar: out = in(n.a).array() + n.scalar; break;
      case Op::kTanh: out = in(n.a).array().tanh(); break;
      case Op::kSigmoid:
        out = in(n.a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
        break;
      case Op::kSoftplus:
        out = in(n.a).unaryExpr(
            [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
        break;
      case Op::kExp: out = in(n.a).array().exp(); break;
      case Op::kLog: out = in(n.a).array().log(); break;
      case Op::kSquare: out = in(n.a).array().square(); break;
      case Op::kSum: out.resize(1, 1); out(0, 0) = in(n.a).sum(); break;
      case Op::kMean: out.resize(1, 1); out(0, 0) = in(n.a).mean(); break;
      case Op::kConcatCols: {
        out.resize(n.rows, n.cols);
        Index c = 0;
        for (int id : n.many) {
          out.middleCols(c, nodes_[id].cols) = in(id);
          c += nodes_[id].cols;
        }
        break;
      }
      case Op::kConcatRows: {
        out.resize(n.rows, n.cols);
        Index r = 0;
        for (int id : n.many) {
          out.middleRows(r, nodes_[id].rows) = in(id);
          r += nodes_[id].rows;
        }
        break;
      }
      case Op::kSliceCols: out = in(n.a).middleCols(n.offset, n.cols); break;
      case Op::kSliceRows: out = in(n.a).middleRows(n.offset, n.rows); break;
    }
  }

  void propagate(int i) {
    const Node& n = nodes_[i];
    const Matrix& g = adjoints_[i];
    const Matrix& y = values_[i];
    const auto x = [&](int id) -> const Matrix& { return values_[id]; };
    const auto adj = [&](int id) -> Matrix& { return adjoints_[id]; };
    switch (n.op) {
      case Op::kInput:
      case Op::kConstant:
      case Op::kParam:
      case Op::kFrozen:
      case Op::kSampledNormal:
        break;
      case Op::kMatMul:
        adj(n.a).noalias() += g * x(n.b).transpose();
        adj(n.b).noalias() += x(n.a).transpose() * g;
        break;
      case Op::kAddRow:
        adj(n.a) += g;
        adj(n.b) += g.colwise().sum();
        break;
      case Op::kAdd:
        adj(n.a) += g;
        adj(n.b) += g;
        break;
      case Op::kSub:
        adj(n.a) += g;
        adj(n.b) -= g;
        break;
      case Op::kMul:
        adj(n.a) += g.cwiseProduct(x(n.b));
        adj(n.b) += g.cwiseProduct(x(n.a));
        break;
      case Op::kScale: adj(n.a) += g * n.scalar; break;
      case Op::kAddScalar: adj(n.a) += g; break;
      case Op::kTanh: adj(n.a).array() += g.array() * (1.0 - y.array().square()); break;
      case Op::kSigmoid: adj(n.a).array() += g.array() * y.array() * (1.0 - y.array()); break;
      case Op::kSoftplus:
        adj(n.a).array() +=
            g.array() * x(n.a).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }).array();
        break;
      case Op::kExp: adj(n.a).array() += g.array() * y.array(); break;
      case Op::kLog: adj(n.a).array() += g.array() / x(n.a).array(); break;
      case Op::kSquare: adj(n.a).array() += 2.0 * g.array() * x(n.a).array(); break;
      case Op::kSum: adj(n.a).array() += g(0, 0); break;
      case Op::kMean: adj(n.a).array() += g(0, 0) / static_cast<double>(x(n.a).size()); break;
      case Op::kConcatCols: {
        Index c = 0;
        for (int id : n.many) {
          adj(id) += g.middleCols(c, nodes_[id].cols);
          c += nodes_[id].cols;
        }
        break;
      }
      case Op::kConcatRows: {
        Index r = 0;
        for (int id : n.many) {
          adj(id) += g.middleRows(r, nodes_[id].rows);
          r += nodes_[id].rows;
        }
        break;
      }
      case Op::kSliceCols: adj(n.a).middleCols(n.offset, n.cols) += g; break;
      case Op::kSliceRows: adj(n.a).middleRows(n.offset, n.rows) += g; break;
    }
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> values_;
  std::vector<Matrix> adjoints_;
  std::unordered_map<const Param*, int> param_nodes_;
  Bindings bindings_;
  bool forwarded_ = false;
};

// Primitive set. Every model computation is expressed with these.

inline Var matmul(Var a, Var b) { return a.tape->binary(Op::kMatMul, a, b); }
inline Var add_row(Var m, Var row) { return m.tape->binary(Op::kAddRow, m, row); }
inline Var affine(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }
inline Var add(Var a, Var b) { return a.tape->binary(Op::kAdd, a, b); }
inline Var sub(Var a, Var b) { return a.tape->binary(Op::kSub, a, b); }
inline Var mul(Var a, Var b) { return a.tape->binary(Op::kMul, a, b); }
inline Var scale(Var a, double s) { return a.tape->unary(Op::kScale, a, s); }
inline Var add_scalar(Var a, double s) { return a.tape->unary(Op::kAddScalar, a, s); }
inline Var tanh(Var a) { return a.tape->unary(Op::kTanh, a); }
inline Var sigmoid(Var a) { return a.tape->unary(Op::kSigmoid, a); }
inline Var softplus(Var a) { return a.tape->unary(Op::kSoftplus, a); }
inline Var exp(Var a) { return a.tape->unary(Op::kExp, a); }
inline Var log(Var a) { return a.tape->unary(Op::kLog, a); }
inline Var square(Var a) { return a.tape->unary(Op::kSquare, a); }
inline Var sum(Var a) { return a.tape->reduce(Op::kSum, a); }
inline Var mean(Var a) { return a.tape->reduce(Op::kMean, a); }
inline Var concat_cols(const std::vector<Var>& parts) {
  return parts.at(0).tape->concat(Op::kConcatCols, parts);
}
inline Var concat_rows(const std::vector<Var>& parts) {
  return parts.at(0).tape->concat(Op::kConcatRows, parts);
}
inline Var slice_cols(Var a, Index offset, Index length) {
  return a.tape->slice(Op::kSliceCols, a, offset, length);
}
inline Var slice_rows(Var a, Index offset, Index length) {
  return a.tape->slice(Op::kSliceRows, a, offset, length);
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// Squared L2 norm of all entries.
inline Var squared_norm(Var a) { return sum(square(a)); }

}  // namespace fhvae::diff
