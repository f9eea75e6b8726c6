#pragma once

// Plain-text model files. A file is a sequence of whitespace-separated
// records, one per line:
//
//   format ssn-model
//   version 1
//   mode Unconstrained
//   term <name> <kind> <column> <kind-specific fields...>
//   knots <term> <count> <values...>
//   array <name> <rows> <cols>        followed by <rows> lines of values
//   end
//
// Every number is written with 17 significant digits, so reading a file back
// reproduces the model bit for bit.

#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ssn/basis.hpp"
#include "ssn/errors.hpp"
#include "ssn/pho.hpp"
#include "ssn/ssn.hpp"
#include "ssn/table.hpp"

namespace ssn {

inline constexpr int kModelFormatVersion = 1;
inline constexpr int kPhoFormatVersion = 1;

namespace io {

inline void check_token(const std::string& s, const char* what) {
  if (s.empty()) throw SchemaError(std::string(what) + " must not be empty");
  for (char c : s)
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r')
      throw SchemaError(std::string(what) + " '" + s + "' contains whitespace");
}

inline void write_array(std::ostream& os, const std::string& name, const DenseMatrix& m) {
  os << "array " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << csv::format(m(i, j));
    os << '\n';
  }
}

inline void write_vector(std::ostream& os, const std::string& name, const DenseVector& v) {
  write_array(os, name, DenseMatrix(v));
}

/// Tokenized records of a model or PHO file.
class RecordReader {
 public:
  explicit RecordReader(std::istream& in) : in_(in) {}

  /// Next non-empty record, or an empty vector at end of input.
  std::vector<std::string> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_;
      std::istringstream ls(line);
      std::vector<std::string> tok;
      for (std::string t; ls >> t;) tok.push_back(std::move(t));
      if (!tok.empty() && tok[0][0] != '#') return tok;
    }
    return {};
  }

  DenseMatrix read_matrix(Index rows, Index cols) {
    DenseMatrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      const auto tok = next();
      if (static_cast<Index>(tok.size()) != cols) fail("array row has " + std::to_string(tok.size()) + " values");
      for (Index j = 0; j < cols; ++j) m(i, j) = number(tok[static_cast<std::size_t>(j)]);
    }
    return m;
  }

  double number(const std::string& s) const {
    double v;
    if (!csv::parse_double(s, v)) fail("not a number: '" + s + "'");
    return v;
  }

  long integer(const std::string& s) const {
    const double v = number(s);
    if (v != static_cast<double>(static_cast<long>(v))) fail("not an integer: '" + s + "'");
    return static_cast<long>(v);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw SchemaError("line " + std::to_string(line_) + ": " + msg);
  }

 private:
  std::istream& in_;
  long line_ = 0;
};

inline void expect_header(RecordReader& rr, const std::string& format, int version) {
  auto tok = rr.next();
  if (tok.size() != 2 || tok[0] != "format" || tok[1] != format) rr.fail("expected 'format " + format + "'");
  tok = rr.next();
  if (tok.size() != 2 || tok[0] != "version") rr.fail("expected 'version'");
  if (rr.integer(tok[1]) != version) rr.fail("unsupported " + format + " version " + tok[1]);
}

inline std::string term_kind_name(const TermSpec& s) {
  if (std::holds_alternative<InterceptTerm>(s.kind)) return "intercept";
  if (std::holds_alternative<LinearTerm>(s.kind)) return "linear";
  if (std::holds_alternative<BSplineTerm>(s.kind)) return "bspline";
  return "factor";
}

}  // namespace io

inline void write_model(std::ostream& os, const SSNModel& model) {
  model.validate();
  os << "format ssn-model\n";
  os << "version " << kModelFormatVersion << '\n';
  os << "mode " << to_string(model.mode) << '\n';
  os << "seed " << model.seed << '\n';
  if (!model.target.empty()) {
    io::check_token(model.target, "target column");
    os << "target " << model.target << '\n';
  }
  os << "z_columns " << model.z_columns.size();
  for (const auto& z : model.z_columns) {
    io::check_token(z, "column name");
    os << ' ' << z;
  }
  os << '\n';
  os << "has_intercept " << (model.layout.has_intercept ? 1 : 0) << '\n';
  os << "design_cols " << model.layout.cols << '\n';
  os << "terms " << model.layout.terms.size() << '\n';
  for (const auto& t : model.layout.terms) {
    io::check_token(t.spec.name, "term name");
    os << "term " << t.spec.name << ' ' << io::term_kind_name(t.spec) << ' '
       << (t.spec.column.empty() ? "-" : t.spec.column) << ' ' << t.first << ' ' << t.count;
    if (const auto* s = std::get_if<BSplineTerm>(&t.spec.kind)) {
      os << ' ' << s->num_basis << ' ' << s->degree << ' ' << s->penalty_order << ' ' << csv::format(t.lo) << ' '
         << csv::format(t.hi);
    } else if (std::holds_alternative<FactorTerm>(t.spec.kind)) {
      os << ' ' << (t.drop_first_level ? 1 : 0) << ' ' << t.levels.size();
      for (const auto& l : t.levels) {
        io::check_token(l, "factor level");
        os << ' ' << l;
      }
    }
    os << '\n';
    if (t.spec.is_spline()) {
      const auto knots = t.knots();
      os << "knots " << t.spec.name << ' ' << knots.size();
      for (double k : knots) os << ' ' << csv::format(k);
      os << '\n';
    }
  }
  const auto& c = model.mlp_config;
  os << "mlp.layer_sizes " << c.layer_sizes.size();
  for (Index s : c.layer_sizes) os << ' ' << s;
  os << '\n';
  os << "mlp.activation " << to_string(c.activation) << '\n';
  os << "mlp.dropout " << csv::format(c.dropout_rate) << '\n';
  os << "mlp.activate_latent " << (c.activate_latent ? 1 : 0) << '\n';
  os << "mlp.bias " << c.num_layers();
  for (Index l = 0; l < c.num_layers(); ++l) os << ' ' << (c.bias(l) ? 1 : 0);
  os << '\n';
  io::write_vector(os, "beta", model.beta);
  for (std::size_t l = 0; l < model.mlp.layers.size(); ++l) {
    io::write_array(os, "mlp.W" + std::to_string(l), model.mlp.layers[l].W);
    if (model.mlp.layers[l].b.size() > 0) io::write_vector(os, "mlp.b" + std::to_string(l), model.mlp.layers[l].b);
  }
  io::write_vector(os, "gamma", model.gamma);
  if (model.alpha.size() > 0) io::write_vector(os, "alpha", model.alpha);
  os << "end\n";
}

inline SSNModel read_model(std::istream& in) {
  io::RecordReader rr(in);
  io::expect_header(rr, "ssn-model", kModelFormatVersion);
  SSNModel m;
  std::map<std::string, DenseMatrix> arrays;
  std::size_t expected_terms = 0;
  bool ended = false;
  for (auto tok = rr.next(); !tok.empty(); tok = rr.next()) {
    const auto& key = tok[0];
    auto need = [&](std::size_t n) {
      if (tok.size() < n) rr.fail("record '" + key + "' is truncated");
    };
    if (key == "end") {
      ended = true;
      break;
    } else if (key == "mode") {
      need(2);
      m.mode = parse_mode(tok[1]);
    } else if (key == "seed") {
      need(2);
      m.seed = std::stoull(tok[1]);
    } else if (key == "target") {
      need(2);
      m.target = tok[1];
    } else if (key == "z_columns") {
      need(2);
      const auto n = static_cast<std::size_t>(rr.integer(tok[1]));
      need(2 + n);
      m.z_columns.assign(tok.begin() + 2, tok.begin() + 2 + static_cast<long>(n));
    } else if (key == "has_intercept") {
      need(2);
      m.layout.has_intercept = rr.integer(tok[1]) != 0;
    } else if (key == "design_cols") {
      need(2);
      m.layout.cols = rr.integer(tok[1]);
    } else if (key == "terms") {
      need(2);
      expected_terms = static_cast<std::size_t>(rr.integer(tok[1]));
    } else if (key == "term") {
      need(6);
      TermLayout t;
      const std::string column = tok[3] == "-" ? "" : tok[3];
      const auto& kind = tok[2];
      t.first = rr.integer(tok[4]);
      t.count = rr.integer(tok[5]);
      if (kind == "intercept") {
        t.spec = TermSpec{tok[1], InterceptTerm{}, ""};
      } else if (kind == "linear") {
        t.spec = TermSpec{tok[1], LinearTerm{}, column};
      } else if (kind == "bspline") {
        need(11);
        BSplineTerm s{static_cast<int>(rr.integer(tok[6])), static_cast<int>(rr.integer(tok[7])),
                      static_cast<int>(rr.integer(tok[8]))};
        t.spec = TermSpec{tok[1], s, column};
        t.lo = rr.number(tok[9]);
        t.hi = rr.number(tok[10]);
      } else if (kind == "factor") {
        need(8);
        t.drop_first_level = rr.integer(tok[6]) != 0;
        const auto n = static_cast<std::size_t>(rr.integer(tok[7]));
        need(8 + n);
        t.levels.assign(tok.begin() + 8, tok.begin() + 8 + static_cast<long>(n));
        t.spec = TermSpec{tok[1], FactorTerm{t.levels}, column};
      } else {
        rr.fail("unknown term kind '" + kind + "'");
      }
      m.layout.terms.push_back(std::move(t));
    } else if (key == "knots") {
      need(3);
      const auto& t = m.layout.term(tok[1]);
      const auto knots = t.knots();
      const auto n = static_cast<std::size_t>(rr.integer(tok[2]));
      need(3 + n);
      if (n != knots.size()) rr.fail("knot count mismatch for '" + tok[1] + "'");
      for (std::size_t i = 0; i < n; ++i)
        if (rr.number(tok[3 + i]) != knots[i]) rr.fail("stored knots of '" + tok[1] + "' are inconsistent");
    } else if (key == "mlp.layer_sizes") {
      need(2);
      const auto n = static_cast<std::size_t>(rr.integer(tok[1]));
      need(2 + n);
      for (std::size_t i = 0; i < n; ++i) m.mlp_config.layer_sizes.push_back(rr.integer(tok[2 + i]));
    } else if (key == "mlp.activation") {
      need(2);
      m.mlp_config.activation = parse_activation(tok[1]);
    } else if (key == "mlp.dropout") {
      need(2);
      m.mlp_config.dropout_rate = rr.number(tok[1]);
    } else if (key == "mlp.activate_latent") {
      need(2);
      m.mlp_config.activate_latent = rr.integer(tok[1]) != 0;
    } else if (key == "mlp.bias") {
      need(2);
      const auto n = static_cast<std::size_t>(rr.integer(tok[1]));
      need(2 + n);
      for (std::size_t i = 0; i < n; ++i) m.mlp_config.use_bias.push_back(rr.integer(tok[2 + i]) != 0);
    } else if (key == "array") {
      need(4);
      arrays[tok[1]] = rr.read_matrix(rr.integer(tok[2]), rr.integer(tok[3]));
    } else {
      rr.fail("unknown record '" + key + "'");
    }
  }
  if (!ended) throw SchemaError("model file has no 'end' record");
  if (m.layout.terms.size() != expected_terms) throw SchemaError("term count does not match 'terms' record");

  auto take = [&](const std::string& name) -> DenseMatrix {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw SchemaError("model file lacks array '" + name + "'");
    return it->second;
  };
  auto take_vector = [&](const std::string& name) -> DenseVector {
    const DenseMatrix a = take(name);
    if (a.cols() != 1) throw SchemaError("array '" + name + "' must be a column");
    return a.col(0);
  };
  m.mlp_config.validate();
  m.beta = take_vector("beta");
  for (Index l = 0; l < m.mlp_config.num_layers(); ++l) {
    DenseLayer layer;
    layer.W = take("mlp.W" + std::to_string(l));
    if (m.mlp_config.bias(l)) layer.b = take_vector("mlp.b" + std::to_string(l));
    m.mlp.layers.push_back(std::move(layer));
  }
  m.gamma = take_vector("gamma");
  if (arrays.count("alpha")) m.alpha = take_vector("alpha");
  m.validate();
  return m;
}

inline void save_model(const std::string& path, const SSNModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write '" + path + "'");
  write_model(os, model);
}

inline SSNModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_model(in);
}

// ---------------------------------------------------------------------------
// PHO results

inline void write_pho(std::ostream& os, const PHOResult& r, const std::string& method) {
  os << "format ssn-pho\n";
  os << "version " << kPhoFormatVersion << '\n';
  os << "method " << method << '\n';
  os << "lambda " << (r.lambda_used ? csv::format(*r.lambda_used) : std::string("none")) << '\n';
  os << "has_intercept " << (r.has_intercept ? 1 : 0) << '\n';
  os << "ortho_residual " << csv::format(r.ortho_residual) << '\n';
  io::write_vector(os, "beta_tilde", r.beta_tilde);
  io::write_vector(os, "alpha", r.alpha);
  os << "end\n";
}

/// Reads the coefficient part of a PHO result; per-observation
/// contributions live in the accompanying CSV.
inline PHOResult read_pho(std::istream& in) {
  io::RecordReader rr(in);
  io::expect_header(rr, "ssn-pho", kPhoFormatVersion);
  PHOResult r;
  bool ended = false;
  for (auto tok = rr.next(); !tok.empty(); tok = rr.next()) {
    if (tok[0] == "end") {
      ended = true;
      break;
    }
    if (tok.size() < 2) rr.fail("record '" + tok[0] + "' is truncated");
    if (tok[0] == "method") {
    } else if (tok[0] == "lambda") {
      if (tok[1] != "none") r.lambda_used = rr.number(tok[1]);
    } else if (tok[0] == "has_intercept") {
      r.has_intercept = rr.integer(tok[1]) != 0;
    } else if (tok[0] == "ortho_residual") {
      r.ortho_residual = rr.number(tok[1]);
    } else if (tok[0] == "array" && tok.size() == 4) {
      const DenseMatrix a = rr.read_matrix(rr.integer(tok[2]), rr.integer(tok[3]));
      if (a.cols() != 1) rr.fail("array '" + tok[1] + "' must be a column");
      if (tok[1] == "beta_tilde")
        r.beta_tilde = a.col(0);
      else if (tok[1] == "alpha")
        r.alpha = a.col(0);
      else
        rr.fail("unknown array '" + tok[1] + "'");
    } else {
      rr.fail("unknown record '" + tok[0] + "'");
    }
  }
  if (!ended) throw SchemaError("PHO file has no 'end' record");
  if (r.beta_tilde.size() == 0 || r.alpha.size() != r.beta_tilde.size())
    throw SchemaError("PHO file lacks beta_tilde/alpha");
  return r;
}

inline void write_contributions(std::ostream& os, const DenseVector& eta_str, const DenseVector& eta_unstr) {
  os << "row,eta_str,eta_unstr\n";
  for (Index i = 0; i < eta_str.size(); ++i)
    os << i << ',' << csv::format(eta_str(i)) << ',' << csv::format(eta_unstr(i)) << '\n';
}

}  // namespace ssn
