#include "tubeplan/tasks.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace tubeplan {

namespace {

using nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::invalid_argument("task file: " + path + ": " + what);
}

void expect_keys(const ordered_json& obj, const std::string& path,
                 const std::set<std::string>& allowed) {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) fail(path + "." + key, "unknown field");
}

const ordered_json& field(const ordered_json& obj, const std::string& path,
                          const std::string& key) {
    if (!obj.contains(key)) fail(path + "." + key, "missing");
    return obj.at(key);
}

double num(const ordered_json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
}

int integer(const ordered_json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<int>();
}

Vector vec(const ordered_json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected an array");
    Vector v(j.size());
    for (size_t i = 0; i < j.size(); ++i) v(i) = num(j[i], path + "[" + std::to_string(i) + "]");
    return v;
}

Matrix mat(const ordered_json& j, const std::string& path) {
    if (!j.is_array()) fail(path, "expected a matrix (nested arrays)");
    if (j.empty()) return Matrix(0, 0);
    Matrix m(j.size(), j[0].size());
    for (size_t r = 0; r < j.size(); ++r) {
        Vector row = vec(j[r], path + "[" + std::to_string(r) + "]");
        if (row.size() != m.cols()) fail(path, "ragged matrix rows");
        m.row(r) = row;
    }
    return m;
}

ordered_json vec_json(const Vector& v) {
    ordered_json out = ordered_json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

ordered_json mat_json(const Matrix& m) {
    ordered_json out = ordered_json::array();
    for (int r = 0; r < m.rows(); ++r) out.push_back(vec_json(m.row(r).transpose()));
    return out;
}

Shape parse_shape(const ordered_json& j, const std::string& path, Body& body) {
    expect_keys(j, path, {"type", "attach", "radius", "A", "b", "normal", "offset"});
    std::string type = field(j, path, "type").get<std::string>();
    std::string attach = field(j, path, "attach").get<std::string>();
    if (attach == "object")
        body = Body::object();
    else if (attach == "world")
        body = Body::world();
    else if (attach.rfind("actuated:", 0) == 0)
        body = Body::actuated(std::stoi(attach.substr(9)));
    else
        fail(path + ".attach", "expected 'object', 'world', or 'actuated:<i>'");
    if (type == "sphere") {
        double r = num(field(j, path, "radius"), path + ".radius");
        if (r <= 0.0) fail(path + ".radius", "must be positive");
        return Sphere{r};
    }
    if (type == "polytope") {
        ConvexPolytope p{mat(field(j, path, "A"), path + ".A"),
                         vec(field(j, path, "b"), path + ".b")};
        if (p.A.rows() != p.b.size()) fail(path, "A rows must match b length");
        return p;
    }
    if (type == "halfspace") {
        HalfSpace h{vec(field(j, path, "normal"), path + ".normal"),
                    num(field(j, path, "offset"), path + ".offset")};
        if (std::abs(h.normal.norm() - 1.0) > 1e-9) fail(path + ".normal", "must be unit length");
        return h;
    }
    fail(path + ".type", "expected 'sphere', 'polytope', or 'halfspace'");
}

ordered_json shape_json(const AttachedShape& as) {
    ordered_json j;
    switch (as.body.kind) {
        case Body::Kind::Actuated:
            j["attach"] = "actuated:" + std::to_string(as.body.index);
            break;
        case Body::Kind::Object:
            j["attach"] = "object";
            break;
        case Body::Kind::World:
            j["attach"] = "world";
            break;
    }
    if (std::holds_alternative<Sphere>(as.shape)) {
        j["type"] = "sphere";
        j["radius"] = std::get<Sphere>(as.shape).radius;
    } else if (std::holds_alternative<ConvexPolytope>(as.shape)) {
        const auto& p = std::get<ConvexPolytope>(as.shape);
        j["type"] = "polytope";
        j["A"] = mat_json(p.A);
        j["b"] = vec_json(p.b);
    } else {
        const auto& h = std::get<HalfSpace>(as.shape);
        j["type"] = "halfspace";
        j["normal"] = vec_json(h.normal);
        j["offset"] = h.offset;
    }
    return j;
}

StageConstraint parse_stage(const ordered_json& j, const std::string& path) {
    expect_keys(j, path, {"G", "g"});
    StageConstraint sc;
    sc.G = mat(field(j, path, "G"), path + ".G");
    sc.g = vec(field(j, path, "g"), path + ".g");
    if (sc.G.rows() != sc.g.size()) fail(path, "G rows must match g length");
    return sc;
}

}  // namespace

TaskSpec parse_task_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("task file: JSON parse error: ") + e.what());
    }
    expect_keys(j, "task",
                {"name", "horizon", "dt", "kappa_dyn", "kappa_geom", "model", "x0", "cost",
                 "constraints", "disturbance", "scp"});
    TaskSpec task;
    task.name = field(j, "task", "name").get<std::string>();
    task.problem.horizon = integer(field(j, "task", "horizon"), "horizon");
    if (task.problem.horizon < 1) fail("horizon", "must be >= 1");

    const ordered_json& jm = field(j, "task", "model");
    expect_keys(jm, "model", {"n_a", "n_o", "stiffness", "mass", "contacts", "shapes", "gravity"});
    MechanicalModel& m = task.model;
    m.n_a = integer(field(jm, "model", "n_a"), "model.n_a");
    m.n_o = integer(field(jm, "model", "n_o"), "model.n_o");
    m.dim = (m.n_o == 1) ? 1 : 2;
    m.dt = num(field(j, "task", "dt"), "dt");
    if (m.dt <= 0.0) fail("dt", "must be positive");
    m.kappa_dyn = num(field(j, "task", "kappa_dyn"), "kappa_dyn");
    m.kappa_geom = num(field(j, "task", "kappa_geom"), "kappa_geom");
    m.K_a = mat(field(jm, "model", "stiffness"), "model.stiffness");
    m.M_o = mat(field(jm, "model", "mass"), "model.mass");
    for (int d = 0; d < m.M_o.rows(); ++d)
        if (m.M_o(d, d) <= 0.0) fail("model.mass", "diagonal must be positive");
    const ordered_json& jshapes = field(jm, "model", "shapes");
    if (!jshapes.is_array()) fail("model.shapes", "expected an array");
    for (size_t i = 0; i < jshapes.size(); ++i) {
        AttachedShape as;
        as.shape = parse_shape(jshapes[i], "model.shapes[" + std::to_string(i) + "]", as.body);
        m.shapes.push_back(as);
    }
    const ordered_json& jcontacts = field(jm, "model", "contacts");
    if (!jcontacts.is_array()) fail("model.contacts", "expected an array");
    for (size_t i = 0; i < jcontacts.size(); ++i) {
        const std::string path = "model.contacts[" + std::to_string(i) + "]";
        expect_keys(jcontacts[i], path, {"pair", "mu", "d"});
        ContactPairSpec pair;
        Vector p = vec(field(jcontacts[i], path, "pair"), path + ".pair");
        if (p.size() != 2) fail(path + ".pair", "expected two shape indices");
        pair.shape_a = static_cast<int>(p(0));
        pair.shape_b = static_cast<int>(p(1));
        pair.mu = num(field(jcontacts[i], path, "mu"), path + ".mu");
        pair.d = integer(field(jcontacts[i], path, "d"), path + ".d");
        if (pair.mu < 0.0) fail(path + ".mu", "must be >= 0");
        m.contacts.push_back(pair);
    }
    m.tau_o_const = vec(field(jm, "model", "gravity"), "model.gravity");
    if (m.tau_o_const.size() != m.n_o) fail("model.gravity", "length must be n_o");

    const ordered_json& jx0 = field(j, "task", "x0");
    expect_keys(jx0, "x0", {"xa", "xo"});
    task.problem.x0.x_a = vec(field(jx0, "x0", "xa"), "x0.xa");
    task.problem.x0.x_o = vec(field(jx0, "x0", "xo"), "x0.xo");
    if (task.problem.x0.x_a.size() != m.n_a) fail("x0.xa", "length must be n_a");
    if (task.problem.x0.x_o.size() != m.n_o) fail("x0.xo", "length must be n_o");

    const ordered_json& jc = field(j, "task", "cost");
    expect_keys(jc, "cost", {"Q", "R", "Qbar", "Rbar", "Qbar_f", "goal"});
    CostSpec& cost = task.problem.cost;
    cost.Q = mat(field(jc, "cost", "Q"), "cost.Q");
    cost.R = mat(field(jc, "cost", "R"), "cost.R");
    cost.Qbar = mat(field(jc, "cost", "Qbar"), "cost.Qbar");
    cost.Rbar = mat(field(jc, "cost", "Rbar"), "cost.Rbar");
    cost.Qbar_f = mat(field(jc, "cost", "Qbar_f"), "cost.Qbar_f");
    cost.x_goal = vec(field(jc, "cost", "goal"), "cost.goal");
    if (cost.x_goal.size() != m.n_x()) fail("cost.goal", "length must be n_a + n_o");

    const ordered_json& jcon = field(j, "task", "constraints");
    expect_keys(jcon, "constraints", {"stage", "terminal"});
    const ordered_json& jstage = field(jcon, "constraints", "stage");
    if (!jstage.is_array()) fail("constraints.stage", "expected an array");
    std::vector<StageConstraint> stage_list;
    for (size_t i = 0; i < jstage.size(); ++i)
        stage_list.push_back(
            parse_stage(jstage[i], "constraints.stage[" + std::to_string(i) + "]"));
    RobustConstraints& rc = task.problem.constraints;
    const int N = task.problem.horizon;
    if (stage_list.empty()) {
        rc.stage.assign(N, StageConstraint{Matrix::Zero(0, m.n_x() + m.n_a), Vector::Zero(0)});
    } else if (static_cast<int>(stage_list.size()) == 1) {
        rc.stage.assign(N, stage_list[0]);
    } else if (static_cast<int>(stage_list.size()) == N) {
        rc.stage = stage_list;
    } else {
        fail("constraints.stage", "expected 0, 1, or horizon entries");
    }
    StageConstraint term = parse_stage(field(jcon, "constraints", "terminal"),
                                       "constraints.terminal");
    rc.G_f = term.G;
    rc.g_f = term.g;

    const ordered_json& jd = field(j, "task", "disturbance");
    expect_keys(jd, "disturbance", {"wc", "wr", "p"});
    DisturbanceSet& dset = task.problem.dset;
    dset.w_c = vec(field(jd, "disturbance", "wc"), "disturbance.wc");
    dset.w_r = num(field(jd, "disturbance", "wr"), "disturbance.wr");
    if (dset.w_r < 0.0) fail("disturbance.wr", "must be >= 0");
    const ordered_json& jp = field(jd, "disturbance", "p");
    if (jp.is_string() && jp.get<std::string>() == "inf")
        dset.norm_p = 0;
    else if (jp.is_number_integer() && jp.get<int>() == 2)
        dset.norm_p = 2;
    else
        fail("disturbance.p", "expected 2 or \"inf\"");

    const ordered_json& js = field(j, "task", "scp");
    expect_keys(js, "scp", {"max_iters", "trust_region", "tol"});
    task.scp.max_iters = integer(field(js, "scp", "max_iters"), "scp.max_iters");
    task.scp.trust_region = num(field(js, "scp", "trust_region"), "scp.trust_region");
    task.scp.tol_dv = num(field(js, "scp", "tol"), "scp.tol");
    task.scp.kappa = m.kappa_dyn;

    task.model.validate();
    return task;
}

std::string task_to_json(const TaskSpec& task) {
    ordered_json j;
    j["name"] = task.name;
    j["horizon"] = task.problem.horizon;
    j["dt"] = task.model.dt;
    j["kappa_dyn"] = task.model.kappa_dyn;
    j["kappa_geom"] = task.model.kappa_geom;
    ordered_json jm;
    jm["n_a"] = task.model.n_a;
    jm["n_o"] = task.model.n_o;
    jm["stiffness"] = mat_json(task.model.K_a);
    jm["mass"] = mat_json(task.model.M_o);
    jm["contacts"] = ordered_json::array();
    for (const auto& c : task.model.contacts) {
        ordered_json jc;
        jc["pair"] = ordered_json::array({c.shape_a, c.shape_b});
        jc["mu"] = c.mu;
        jc["d"] = c.d;
        jm["contacts"].push_back(jc);
    }
    jm["shapes"] = ordered_json::array();
    for (const auto& s : task.model.shapes) jm["shapes"].push_back(shape_json(s));
    jm["gravity"] = vec_json(task.model.tau_o_const.size() == task.model.n_o
                                 ? task.model.tau_o_const
                                 : Vector::Zero(task.model.n_o));
    j["model"] = jm;
    j["x0"] = {{"xa", vec_json(task.problem.x0.x_a)}, {"xo", vec_json(task.problem.x0.x_o)}};
    j["cost"] = {{"Q", mat_json(task.problem.cost.Q)},
                 {"R", mat_json(task.problem.cost.R)},
                 {"Qbar", mat_json(task.problem.cost.Qbar)},
                 {"Rbar", mat_json(task.problem.cost.Rbar)},
                 {"Qbar_f", mat_json(task.problem.cost.Qbar_f)},
                 {"goal", vec_json(task.problem.cost.x_goal)}};
    ordered_json jstage = ordered_json::array();
    if (!task.problem.constraints.stage.empty() &&
        task.problem.constraints.stage[0].G.rows() > 0) {
        // all built-in tasks use time-invariant stage constraints
        jstage.push_back({{"G", mat_json(task.problem.constraints.stage[0].G)},
                          {"g", vec_json(task.problem.constraints.stage[0].g)}});
    }
    j["constraints"] = {{"stage", jstage},
                        {"terminal",
                         {{"G", mat_json(task.problem.constraints.G_f)},
                          {"g", vec_json(task.problem.constraints.g_f)}}}};
    ordered_json jd;
    jd["wc"] = vec_json(task.problem.dset.w_c);
    jd["wr"] = task.problem.dset.w_r;
    if (task.problem.dset.norm_p == 2)
        jd["p"] = 2;
    else
        jd["p"] = "inf";
    j["disturbance"] = jd;
    j["scp"] = {{"max_iters", task.scp.max_iters},
                {"trust_region", task.scp.trust_region},
                {"tol", task.scp.tol_dv}};
    return j.dump(2);
}

TaskSpec load_task(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("task file: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_task_json(ss.str());
}

void save_task(const TaskSpec& task, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("task file: cannot write " + path);
    out << task_to_json(task) << "\n";
}

TaskSpec pusher1d() {
    TaskSpec task;
    task.name = "pusher1d";
    MechanicalModel& m = task.model;
    m.dim = 1;
    m.n_a = 1;
    m.n_o = 1;
    m.K_a = Matrix::Constant(1, 1, 100.0);
    m.M_o = Matrix::Constant(1, 1, 1.0);
    m.dt = 0.1;
    m.kappa_dyn = 1e-3;
    m.kappa_geom = 0.0;
    m.shapes.push_back({Sphere{0.05}, Body::actuated(0)});
    m.shapes.push_back({Sphere{0.05}, Body::object()});
    m.contacts.push_back({0, 1, 0.0, 1});

    PlanningProblem& p = task.problem;
    p.x0.x_a = Vector::Zero(1);
    p.x0.x_o = Vector::Constant(1, 0.2);
    p.horizon = 40;
    p.cost.Q = Matrix::Zero(2, 2);
    p.cost.Q(1, 1) = 4.0;
    p.cost.R = Matrix::Constant(1, 1, 0.2);
    p.cost.Qbar = Matrix::Identity(2, 2);
    p.cost.Rbar = Matrix::Constant(1, 1, 0.1);
    p.cost.Qbar_f = p.cost.Qbar;
    p.cost.x_goal = Vector(2);
    p.cost.x_goal << 0.4, 0.5;
    p.constraints.stage.assign(p.horizon, {Matrix::Zero(0, 3), Vector::Zero(0)});
    p.constraints.G_f = Matrix::Zero(0, 2);
    p.constraints.g_f = Vector::Zero(0);
    p.dset = DisturbanceSet::box_cover(1);

    task.scp.max_iters = 30;
    task.scp.trust_region = 1.0;
    task.scp.tol_dv = 1e-5;
    task.scp.kappa = m.kappa_dyn;
    return task;
}

TaskSpec planar_pusher_slider() {
    TaskSpec task;
    task.name = "planar_pusher_slider";
    MechanicalModel& m = task.model;
    m.dim = 2;
    m.n_a = 2;
    m.n_o = 3;
    m.K_a = 100.0 * Matrix::Identity(2, 2);
    m.M_o = Matrix::Zero(3, 3);
    m.M_o.diagonal() << 1.0, 1.0, 0.01;
    m.dt = 0.1;
    m.kappa_dyn = 1e-3;
    m.kappa_geom = 1e-3;
    m.shapes.push_back({Sphere{0.05}, Body::actuated(0)});
    ConvexPolytope box;
    box.A = Matrix(4, 2);
    box.A << 1, 0, -1, 0, 0, 1, 0, -1;
    box.b = Vector::Constant(4, 0.1);
    m.shapes.push_back({box, Body::object()});
    m.contacts.push_back({0, 1, 0.5, 2});

    PlanningProblem& p = task.problem;
    p.x0.x_a = Vector(2);
    p.x0.x_a << -0.18, 0.0;
    p.x0.x_o = Vector::Zero(3);
    p.horizon = 30;
    p.cost.Q = Matrix::Zero(5, 5);
    p.cost.Q.diagonal() << 0.0, 0.0, 4.0, 4.0, 0.4;
    p.cost.R = 0.2 * Matrix::Identity(2, 2);
    p.cost.Qbar = Matrix::Identity(5, 5);
    p.cost.Rbar = 0.1 * Matrix::Identity(2, 2);
    p.cost.Qbar_f = p.cost.Qbar;
    p.cost.x_goal = Vector::Zero(5);
    p.cost.x_goal << 0.1, 0.0, 0.3, 0.0, 0.0;
    // lateral corridor on the slider
    StageConstraint lat;
    lat.G = Matrix::Zero(2, 7);
    lat.G(0, 3) = 1.0;
    lat.G(1, 3) = -1.0;
    lat.g = Vector::Constant(2, -0.08);
    p.constraints.stage.assign(p.horizon, lat);
    p.constraints.G_f = Matrix::Zero(0, 5);
    p.constraints.g_f = Vector::Zero(0);
    p.dset = DisturbanceSet::box_cover(1);

    task.scp.max_iters = 25;
    task.scp.trust_region = 0.6;
    task.scp.tol_dv = 1e-4;
    task.scp.kappa = m.kappa_dyn;
    return task;
}

TaskSpec planar_two_finger_box() {
    TaskSpec task;
    task.name = "planar_two_finger_box";
    MechanicalModel& m = task.model;
    m.dim = 2;
    m.n_a = 4;
    m.n_o = 3;
    m.K_a = 100.0 * Matrix::Identity(4, 4);
    m.M_o = Matrix::Zero(3, 3);
    m.M_o.diagonal() << 1.0, 1.0, 0.01;
    m.dt = 0.1;
    m.kappa_dyn = 1e-3;
    m.kappa_geom = 1e-3;
    m.shapes.push_back({Sphere{0.05}, Body::actuated(0)});
    m.shapes.push_back({Sphere{0.05}, Body::actuated(1)});
    ConvexPolytope box;
    box.A = Matrix(4, 2);
    box.A << 1, 0, -1, 0, 0, 1, 0, -1;
    box.b = Vector::Constant(4, 0.1);
    m.shapes.push_back({box, Body::object()});
    m.contacts.push_back({0, 2, 0.5, 2});
    m.contacts.push_back({1, 2, 0.5, 2});

    PlanningProblem& p = task.problem;
    p.x0.x_a = Vector(4);
    p.x0.x_a << -0.17, 0.04, 0.17, -0.04;
    p.x0.x_o = Vector::Zero(3);
    p.horizon = 30;
    p.cost.Q = Matrix::Zero(7, 7);
    p.cost.Q.diagonal() << 0.0, 0.0, 0.0, 0.0, 4.0, 4.0, 1.0;
    p.cost.R = 0.2 * Matrix::Identity(4, 4);
    p.cost.Qbar = Matrix::Identity(7, 7);
    p.cost.Rbar = 0.1 * Matrix::Identity(4, 4);
    p.cost.Qbar_f = p.cost.Qbar;
    p.cost.x_goal = Vector::Zero(7);
    p.cost.x_goal << -0.07, 0.14, 0.21, 0.04, 0.1, 0.1, 0.5;
    p.constraints.stage.assign(p.horizon,
                               StageConstraint{Matrix::Zero(0, 11), Vector::Zero(0)});
    p.constraints.G_f = Matrix::Zero(0, 7);
    p.constraints.g_f = Vector::Zero(0);
    p.dset = DisturbanceSet::box_cover(2);

    task.scp.max_iters = 25;
    task.scp.trust_region = 0.6;
    task.scp.tol_dv = 1e-4;
    task.scp.kappa = m.kappa_dyn;
    return task;
}

}  // namespace tubeplan
