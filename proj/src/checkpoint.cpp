#include "red/checkpoint.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "red/data.hpp"

namespace red {

namespace {

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

[[noreturn]] void fail(const std::string& what) {
    throw DataError("checkpoint: " + what);
}

} // namespace

const char* arch_name(Arch arch) {
    switch (arch) {
    case Arch::red:
        return "red";
    case Arch::fc:
        return "fc";
    case Arch::efc:
        return "efc";
    }
    fail("unknown architecture tag");
}

Arch arch_from_name(const std::string& name) {
    if (name == "red" || name == "ed") {
        return Arch::red;
    }
    if (name == "fc") {
        return Arch::fc;
    }
    if (name == "efc") {
        return Arch::efc;
    }
    fail("unknown architecture '" + name + "'");
}

const RedParams& Checkpoint::red() const {
    if (const auto* p = std::get_if<RedParams>(&params)) {
        return *p;
    }
    fail("checkpoint does not hold encoder-decoder parameters");
}

const FcParams& Checkpoint::fc() const {
    if (const auto* p = std::get_if<FcParams>(&params)) {
        return *p;
    }
    fail("checkpoint does not hold fc parameters");
}

const EfcParams& Checkpoint::efc() const {
    if (const auto* p = std::get_if<EfcParams>(&params)) {
        return *p;
    }
    fail("checkpoint does not hold efc parameters");
}

namespace {

void write_tensor(std::ostream& out, const char* name, const Matrix& m) {
    out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << "\n";
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double* row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            if (c != 0) {
                out << ' ';
            }
            out << format_double(row[c]);
        }
        out << "\n";
    }
}

void write_tensor(std::ostream& out, const char* name, const Vector& v) {
    out << "vector " << name << ' ' << v.size() << "\n";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i != 0) {
            out << ' ';
        }
        out << format_double(v[i]);
    }
    out << "\n";
}

std::vector<double> read_values(std::istream& in, std::size_t count, const std::string& name) {
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (!(in >> values[i])) {
            fail("truncated values for tensor '" + name + "'");
        }
        if (!std::isfinite(values[i])) {
            fail("non-finite value in tensor '" + name + "'");
        }
    }
    return values;
}

void read_tensor(std::istream& in, const char* name, Matrix& m) {
    std::string kind, got;
    std::size_t rows = 0, cols = 0;
    if (!(in >> kind >> got >> rows >> cols)) {
        fail("truncated header for tensor '" + std::string(name) + "'");
    }
    if (kind != "matrix" || got != name) {
        fail("expected 'matrix " + std::string(name) + "', got '" + kind + " " + got + "'");
    }
    if (rows != m.rows() || cols != m.cols()) {
        fail("tensor '" + std::string(name) + "' has shape " + std::to_string(rows) + "x" +
             std::to_string(cols) + ", expected " + std::to_string(m.rows()) + "x" +
             std::to_string(m.cols()));
    }
    const std::vector<double> values = read_values(in, rows * cols, name);
    std::copy(values.begin(), values.end(), m.span().begin());
}

void read_tensor(std::istream& in, const char* name, Vector& v) {
    std::string kind, got;
    std::size_t count = 0;
    if (!(in >> kind >> got >> count)) {
        fail("truncated header for tensor '" + std::string(name) + "'");
    }
    if (kind != "vector" || got != name) {
        fail("expected 'vector " + std::string(name) + "', got '" + kind + " " + got + "'");
    }
    if (count != v.size()) {
        fail("tensor '" + std::string(name) + "' has length " + std::to_string(count) +
             ", expected " + std::to_string(v.size()));
    }
    const std::vector<double> values = read_values(in, count, name);
    std::copy(values.begin(), values.end(), v.begin());
}

std::size_t read_size_field(std::istream& in, const char* key) {
    std::string got;
    std::size_t value = 0;
    if (!(in >> got >> value) || got != key) {
        fail(std::string("expected field '") + key + "'");
    }
    return value;
}

double read_double_field(std::istream& in, const char* key) {
    std::string got;
    double value = 0.0;
    if (!(in >> got >> value) || got != key) {
        fail(std::string("expected field '") + key + "'");
    }
    return value;
}

} // namespace

std::string checkpoint_to_string(const Checkpoint& ckpt) {
    std::ostringstream out;
    out << "REDCKPT v1\n";
    out << "arch " << arch_name(ckpt.arch) << "\n";
    const Hyper& hp = ckpt.hyper;
    out << "t_enc " << hp.t_enc << "\n";
    out << "t_dec " << hp.t_dec << "\n";
    out << "d " << hp.d << "\n";
    out << "h " << hp.h << "\n";
    out << "h_c " << hp.hidden_c() << "\n";
    out << "c " << hp.c << "\n";
    out << "alpha " << format_double(hp.alpha) << "\n";
    out << "lr " << format_double(hp.lr) << "\n";
    out << "batch " << hp.batch << "\n";
    out << "chunk_frames " << hp.chunk_frames << "\n";
    out << "fps " << hp.fps << "\n";
    out << "t_ant " << hp.t_ant << "\n";
    std::visit([&](const auto& params) {
        visit_tensors(params, [&](const char* name, const auto& t) { write_tensor(out, name, t); });
    }, ckpt.params);
    return out.str();
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail("cannot write " + path.string());
    }
    out << checkpoint_to_string(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        fail("cannot open " + path.string());
    }
    std::string magic, version;
    if (!(in >> magic >> version) || magic != "REDCKPT" || version != "v1") {
        fail("bad magic in " + path.string());
    }
    std::string key, arch_str;
    if (!(in >> key >> arch_str) || key != "arch") {
        fail("expected 'arch' field");
    }

    Checkpoint ckpt;
    ckpt.arch = arch_from_name(arch_str);
    Hyper& hp = ckpt.hyper;
    hp.t_enc = read_size_field(in, "t_enc");
    hp.t_dec = read_size_field(in, "t_dec");
    hp.d = read_size_field(in, "d");
    hp.h = read_size_field(in, "h");
    hp.h_c = read_size_field(in, "h_c");
    hp.c = read_size_field(in, "c");
    hp.alpha = read_double_field(in, "alpha");
    hp.lr = read_double_field(in, "lr");
    hp.batch = read_size_field(in, "batch");
    hp.chunk_frames = read_size_field(in, "chunk_frames");
    hp.fps = read_size_field(in, "fps");
    hp.t_ant = read_size_field(in, "t_ant");
    hp.validate();

    switch (ckpt.arch) {
    case Arch::red:
        ckpt.params = make_red_params(hp);
        break;
    case Arch::fc:
        ckpt.params = make_fc_params(hp);
        break;
    case Arch::efc:
        ckpt.params = make_efc_params(hp);
        break;
    }
    std::visit([&](auto& params) {
        visit_tensors(params, [&](const char* name, auto& t) { read_tensor(in, name, t); });
    }, ckpt.params);

    std::string extra;
    if (in >> extra) {
        fail("trailing content '" + extra + "' in " + path.string());
    }
    return ckpt;
}

} // namespace red
