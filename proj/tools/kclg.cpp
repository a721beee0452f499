// kclg: command-line front end. Exit codes: 0 ok, 1 runtime failure,
// 2 validation or argument error, 3 budget exceeded.
#include "kclg/error.hpp"
#include "kclg/models.hpp"
#include "kclg/moves.hpp"
#include "kclg/selfdiff.hpp"
#include "kclg/simulate.hpp"
#include "kclg/spectral.hpp"
#include "kclg/transport.hpp"
#include "kclg/util.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

using json = nlohmann::json;
using namespace kclg;

namespace {

constexpr int kExitRuntime = 1, kExitValidation = 2, kExitBudget = 3;

std::string readFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ConstraintModel resolveModel(const std::string& name) {
    if (name == "bt1d") return bt1d();
    if (name == "bt2d") return bt2d();
    if (name == "glt1d") return glt1d();
    if (name.rfind("sep", 0) == 0 && name.size() == 4 && name[3] >= '1' && name[3] <= '3') return sep(name[3] - '0');
    if (name == "bt1d-aux") return buildAuxModel(AuxSpec::make(1, {{Site{1}, Site{2}}}), name);
    if (name == "bt2d-aux") return buildAuxModel(AuxSpec::fromCertificate(bt2dCertificate()), name);
    if (std::filesystem::exists(name)) return modelFromJson(readFile(name));
    throw ArgumentError("model: unknown name or missing file '" + name + "'");
}

MobileClusterCertificate certificateFor(const ConstraintModel& m) {
    if (m.name() == "bt1d") return bt1dCertificate();
    if (m.name() == "bt2d") return bt2dCertificate();
    throw ArgumentError("model: no built-in certificate for '" + m.name() + "'");
}

AuxSpec resolveAuxSpec(const std::string& name) {
    if (name == "bt1d-aux") return AuxSpec::make(1, {{Site{1}, Site{2}}});
    if (name == "bt2d-aux") return AuxSpec::fromCertificate(bt2dCertificate());
    if (!std::filesystem::exists(name)) throw ArgumentError("auxspec: unknown name or missing file '" + name + "'");
    json j;
    try {
        j = json::parse(readFile(name));
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("auxspec: ") + e.what());
    }
    if (!j.contains("dim") || !j["dim"].is_number_integer()) throw ArgumentError("auxspec: field 'dim' missing");
    if (!j.contains("sets") || !j["sets"].is_array()) throw ArgumentError("auxspec: field 'sets' missing");
    const int dim = j["dim"];
    std::vector<std::vector<Site>> sets;
    for (const auto& s : j["sets"]) {
        std::vector<Site> A;
        for (const auto& o : s) A.push_back(parseSite(dim, o.get<std::string>()));
        sets.push_back(A);
    }
    return AuxSpec::make(dim, sets);
}

// "1,2;3,4" -> sites
std::vector<Site> parseSites(int dim, const std::string& text) {
    std::vector<Site> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ';'))
        if (!tok.empty()) out.push_back(parseSite(dim, tok));
    return out;
}

std::vector<double> parseVector(const std::string& text, int dim) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ArgumentError("u: malformed component '" + tok + "'");
        }
    }
    if (static_cast<int>(out.size()) != dim)
        throw ArgumentError("u: expected " + std::to_string(dim) + " components");
    return out;
}

MoveProgram resolveMove(const ConstraintModel& m, std::string name) {
    if (std::filesystem::exists(name)) return moveFromJson(readFile(name));
    if (name.size() > 5 && name.substr(name.size() - 5) == ".move") name = name.substr(0, name.size() - 5);
    auto cert = certificateFor(m);
    // tr1, tr-1, ex2, ex-2, ...
    for (const std::string kind : {"tr", "ex"}) {
        if (name.rfind(kind, 0) != 0 || name.size() <= 2) continue;
        std::string rest = name.substr(2);
        if (rest == "-1-composition" && kind == "ex" && m.name() == "bt1d") return bt1dExMinus1Composition(cert);
        const Direction e = Direction::parse(rest[0] == '-' ? rest : "+" + rest);
        if (e.axis >= cert.dim) throw ArgumentError("move: direction outside the model dimension");
        return kind == "tr" ? cert.translation(e) : cert.exchange(e);
    }
    if (name == "hop") return hopMove(m, cert);
    if (name.rfind("sigma", 0) == 0 && name.size() == 6) return sigmaMove(m, cert, name[5] - '1');
    if (name == "tr2-figure" && m.name() == "bt2d") return bt2dTr2Figure();
    throw ArgumentError("move: unknown name or missing file '" + name + "'");
}

struct Output {
    std::string path;
    void emit(const std::string& text) const {
        if (path.empty()) {
            std::cout << text;
            if (!text.empty() && text.back() != '\n') std::cout << '\n';
            return;
        }
        std::ofstream out(path);
        if (!out) throw ArgumentError("output: cannot write '" + path + "'");
        out << text;
        if (!text.empty() && text.back() != '\n') out << '\n';
    }
};

std::string headerLines(const json& prov) {
    std::string s;
    for (auto it = prov.begin(); it != prov.end(); ++it)
        s += it.key() + "=" + (it->is_string() ? it->get<std::string>() : it->dump()) + "\n";
    return s;
}

std::string csvHeader(const json& prov) {
    std::string s, line;
    std::istringstream in(headerLines(prov));
    while (std::getline(in, line)) s += "# " + line + "\n";
    return s;
}

json provenance(const std::string& command, const std::vector<std::string>& argv) {
    json p;
    p["command"] = command;
    std::string line;
    for (const auto& a : argv) line += (line.empty() ? "" : " ") + a;
    p["argv"] = line;
    return p;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Noncooperative kinetically constrained lattice gases"};
    app.require_subcommand(1);
    std::string outPath;
    unsigned threads = 0;
    app.add_option("-o,--out", outPath, "Output file (default stdout)");
    app.add_option("--threads", threads, "Worker threads (0 = all cores)");
    std::vector<std::string> args(argv, argv + argc);

    // verify-model
    std::string modelName;
    auto* vm = app.add_subcommand("verify-model", "Check the constraint axioms");
    vm->add_option("model", modelName, "Built-in name or JSON model file")->required();

    // verify-move
    std::string moveName;
    bool exhaustive = false, worstCase = false, sampled = false;
    std::uint64_t samples = 1000, seed = 1;
    auto* vmv = app.add_subcommand("verify-move", "Validate a move program");
    vmv->add_option("model", modelName)->required();
    vmv->add_option("move", moveName, "Library name (tr1, ex-1, hop, sigma1, ...) or JSON move file")->required();
    auto* fEx = vmv->add_flag("--exhaustive", exhaustive);
    auto* fWc = vmv->add_flag("--worst-case", worstCase);
    auto* fSa = vmv->add_flag("--sampled", sampled);
    fEx->excludes(fWc)->excludes(fSa);
    fWc->excludes(fSa);
    vmv->add_option("--samples", samples);
    vmv->add_option("--seed", seed);

    // certify
    std::string clusterText;
    int l = 0;
    std::uint64_t budget = 2000000;
    auto* cf = app.add_subcommand("certify", "Search translation and exchange moves for a cluster");
    cf->add_option("model", modelName)->required();
    cf->add_option("--cluster", clusterText, "Offsets, e.g. '1;2' or '0,0;1,0'")->required();
    cf->add_option("--l", l)->required();
    cf->add_option("--budget", budget);

    // gap
    std::string setting = "reservoir", boundaryName = "occupied";
    int L = 8, k = -1;
    double q = 0.5;
    auto* gp = app.add_subcommand("gap", "Exact relaxation time");
    gp->add_option("model", modelName)->required();
    gp->add_option("--setting", setting)->check(CLI::IsMember({"reservoir", "closed", "torus"}));
    gp->add_option("--L", L)->required();
    gp->add_option("--q", q);
    gp->add_option("--k", k);
    gp->add_option("--boundary", boundaryName)->check(CLI::IsMember({"occupied", "empty"}));

    // ergodic
    std::string clustersText;
    auto* er = app.add_subcommand("ergodic", "Ergodic components of a closed box");
    er->add_option("model", modelName)->required();
    er->add_option("--L", L)->required();
    er->add_option("--k", k)->required();
    er->add_option("--clusters", clustersText, "Clusters separated by '|', e.g. '1;2|1;3'")->required();
    er->add_option("--boundary", boundaryName)->check(CLI::IsMember({"occupied", "empty"}));

    // diffusion
    std::string uText = "1", windowText, estimatorName = "exact";
    auto* df = app.add_subcommand("diffusion", "Windowed variational diffusion coefficient");
    df->add_option("model", modelName)->required();
    df->add_option("--q", q)->required();
    df->add_option("--u", uText);
    df->add_option("--window", windowText, "Sites separated by ';'");
    df->add_option("--estimator", estimatorName)->check(CLI::IsMember({"exact", "mc"}));
    df->add_option("--samples", samples);
    df->add_option("--seed", seed);

    // aux
    std::string auxName;
    auto* ax = app.add_subcommand("aux", "Auxiliary dynamics checks");
    ax->require_subcommand(1);
    auto* axc = ax->add_subcommand("current", "Total current on random tori");
    axc->add_option("auxspec", auxName, "bt1d-aux, bt2d-aux or a JSON spec file")->required();
    axc->add_option("--L", L);
    axc->add_option("--samples", samples);
    axc->add_option("--seed", seed);
    auto* axd = ax->add_subcommand("dcoef", "Closed form against the windowed minimum");
    axd->add_option("auxspec", auxName)->required();
    axd->add_option("--q", q)->required();
    axd->add_option("--u", uText);
    axd->add_option("--window", windowText);

    // selfdiff
    std::string dynName;
    double tMax = 50.0;
    int points = 10, replicas = 100;
    auto* sd = app.add_subcommand("selfdiff", "Tracer self-diffusion");
    sd->require_subcommand(1);
    auto* sdq = sd->add_subcommand("qp", "Variational bound over a window");
    sdq->add_option("dynamics", dynName, "kc:<model> or aux:<model with certificate>")->required();
    sdq->add_option("--q", q)->required();
    sdq->add_option("--u", uText);
    sdq->add_option("--window", windowText);
    auto* sdm = sd->add_subcommand("msd", "Simulated tracer mean squared displacement");
    sdm->add_option("dynamics", dynName)->required();
    sdm->add_option("--L", L);
    sdm->add_option("--q", q)->required();
    sdm->add_option("--u", uText);
    sdm->add_option("--tmax", tMax);
    sdm->add_option("--points", points);
    sdm->add_option("--replicas", replicas);
    sdm->add_option("--seed", seed);

    // simulate
    std::string observable = "density";
    auto* sm = app.add_subcommand("simulate", "Kinetic Monte Carlo run");
    sm->add_option("model", modelName)->required();
    sm->add_option("--L", L)->required();
    sm->add_option("--boundary", boundaryName)
        ->check(CLI::IsMember({"periodic", "occupied", "empty", "reservoir"}));
    sm->add_option("--q", q);
    sm->add_option("--tmax", tMax);
    sm->add_option("--points", points);
    sm->add_option("--seed", seed);
    sm->add_option("--observable", observable, "density or site:<index>");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitValidation;
    }

    const Output out{outPath};
    try {
        if (*vm) {
            auto m = resolveModel(modelName);
            auto rep = verifyAxioms(m);
            json j = provenance("verify-model", args);
            j["model"] = m.name();
            j["model_hash"] = m.hash();
            j["method"] = rep.method;
            for (const auto& e : rep.entries)
                j["axioms"].push_back({{"name", e.name}, {"pass", e.pass}, {"detail", e.detail}, {"witness", e.witness}});
            j["pass"] = rep.allPass();
            out.emit(j.dump(2));
            return rep.allPass() ? 0 : kExitValidation;
        }
        if (*vmv) {
            auto m = resolveModel(modelName);
            auto mv = resolveMove(m, moveName);
            MoveContext ctx;
            ctx.model = &m;
            ctx.window = mv.window;
            ctx.samples = samples;
            ctx.seed = seed;
            const ValidationMode mode = exhaustive ? ValidationMode::Exhaustive
                                        : sampled  ? ValidationMode::Sampled
                                                   : ValidationMode::WorstCase;
            auto rep = validate(mv, ctx, mode);
            json j = json::parse(rep.toJson());
            j["provenance"] = provenance("verify-move", args);
            j["move"] = mv.name;
            j["model_hash"] = m.hash();
            j["permutation"] = mv.deterministic() ? mv.permutation().str() : "";
            out.emit(j.dump(2));
            return rep.valid ? 0 : kExitValidation;
        }
        if (*cf) {
            auto m = resolveModel(modelName);
            auto res = certify(m, parseSites(m.dim(), clusterText), l, budget);
            if (!res.certificate) {
                std::cerr << "certify: " << res.failure << "\n";
                return res.failure.find("budget") != std::string::npos ? kExitBudget : kExitValidation;
            }
            out.emit(certificateToJson(*res.certificate, m));
            return 0;
        }
        if (*gp) {
            auto m = resolveModel(modelName);
            RateMatrix gen = [&] {
                if (setting == "reservoir") return buildReservoirGenerator(m, L, q);
                if (k < 0) throw ArgumentError("k: required for the " + setting + " setting");
                if (setting == "torus") return buildTorusGenerator(m, L, k);
                return buildClosedGenerator(m, L, k, parseBoundary(boundaryName));
            }();
            SpectralOptions so;
            auto rel = relaxationTime(gen, so);
            json prov = provenance("gap", args);
            prov["model_hash"] = m.hash();
            std::ostringstream os;
            os << csvHeader(prov);
            os << "model,setting,L,q,k,states,components,gap,tau,method\n";
            os << m.name() << "," << setting << "," << L << "," << (setting == "reservoir" ? formatDouble(q) : "")
               << "," << (setting == "reservoir" ? "" : std::to_string(k)) << "," << gen.space.size() << ","
               << rel.components << "," << formatDouble(rel.gap) << "," << formatDouble(rel.tau) << "," << rel.method
               << "\n";
            out.emit(os.str());
            return 0;
        }
        if (*er) {
            auto m = resolveModel(modelName);
            std::vector<std::vector<Site>> clusters;
            std::stringstream ss(clustersText);
            for (std::string c; std::getline(ss, c, '|');) clusters.push_back(parseSites(m.dim(), c));
            auto rep = ergodicComponents(m, L, k, clusters, parseBoundary(boundaryName));
            json j = provenance("ergodic", args);
            j["model_hash"] = m.hash();
            j["components"] = rep.sizes;
            j["has_cluster"] = rep.hasCluster;
            j["ergodic_states"] = rep.ergodicStates;
            j["static_match"] = rep.staticMatch;
            j["mismatches"] = rep.mismatches;
            if (!rep.exampleMismatch.empty()) j["example_mismatch"] = rep.exampleMismatch;
            out.emit(j.dump(2));
            return 0;
        }
        if (*df) {
            auto m = resolveModel(modelName);
            const auto u = parseVector(uText, m.dim());
            const auto window = parseSites(m.dim(), windowText);
            const Estimator est = estimatorName == "mc" ? Estimator::monteCarlo(samples, seed) : Estimator::exact();
            auto vp = assembleDiffusionQP(m, u, window, q, est);
            auto sol = solveQP(vp);
            json prov = provenance("diffusion", args);
            prov["model_hash"] = m.hash();
            std::ostringstream os;
            os << csvHeader(prov) << "model,q,u,window,estimator,D,residual\n";
            os << m.name() << "," << formatDouble(q) << ",\"" << uText << "\",\"" << windowText << "\"," << est.str()
               << "," << formatDouble(sol.D) << "," << formatDouble(sol.residual) << "\n";
            out.emit(os.str());
            return 0;
        }
        if (*axc) {
            auto spec = resolveAuxSpec(auxName);
            auto aux = buildAuxModel(spec, auxName);
            Rng rng = makeRng(seed);
            double worst = 0.0;
            for (std::uint64_t s = 0; s < samples; ++s) {
                auto c = sampleEquilibrium(Domain(spec.dim, L, Boundary::Periodic), uniform01(rng), rng());
                for (double J : totalCurrent(c, aux)) worst = std::max(worst, std::abs(J));
            }
            out.emit("max |current| = " + formatDouble(worst) + " over " + std::to_string(samples) +
                     " configurations (L=" + std::to_string(L) + ", seed=" + std::to_string(seed) + ")");
            return worst == 0.0 ? 0 : kExitValidation;
        }
        if (*axd) {
            auto spec = resolveAuxSpec(auxName);
            auto aux = buildAuxModel(spec, auxName);
            const auto u = parseVector(uText, spec.dim);
            const auto window = parseSites(spec.dim, windowText);
            const double closed = auxDiffusionClosedForm(aux, q, u);
            const double qp = diffusionWindow(aux, u, window, q);
            json prov = provenance("aux dcoef", args);
            prov["model_hash"] = aux.hash();
            std::ostringstream os;
            os << csvHeader(prov) << "auxspec,q,u,window,closed_form,window_minimum,difference\n";
            os << auxName << "," << formatDouble(q) << ",\"" << uText << "\",\"" << windowText << "\","
               << formatDouble(closed) << "," << formatDouble(qp) << "," << formatDouble(qp - closed) << "\n";
            out.emit(os.str());
            return 0;
        }
        if (*sdq || *sdm) {
            const auto colon = dynName.find(':');
            if (colon == std::string::npos) throw ArgumentError("dynamics: expected kc:<model> or aux:<model>");
            const std::string kind = dynName.substr(0, colon);
            auto m = resolveModel(dynName.substr(colon + 1));
            PermutationDynamics dyn = kind == "kc"    ? kcTracerDynamics(m)
                                      : kind == "aux" ? auxTracerDynamics(m, certificateFor(m))
                                                      : throw ArgumentError("dynamics: unknown kind '" + kind + "'");
            const auto u = parseVector(uText, m.dim());
            json prov = provenance(*sdq ? "selfdiff qp" : "selfdiff msd", args);
            prov["model_hash"] = m.hash();
            std::ostringstream os;
            os << csvHeader(prov);
            if (*sdq) {
                const auto window = parseSites(m.dim(), windowText);
                os << "dynamics,q,u,window,value\n";
                os << dynName << "," << formatDouble(q) << ",\"" << uText << "\",\"" << windowText << "\","
                   << formatDouble(selfDiffusionWindow(dyn, u, window, q)) << "\n";
            } else {
                TracerOptions o;
                o.L = L;
                o.q = q;
                o.u = u;
                o.replicas = replicas;
                o.seed = seed;
                o.threads = threads;
                o.schedule = uniformSchedule(tMax / points, points);
                auto tr = tracerRun(dyn, o);
                os << "# replicas=" << tr.replicas << " frozen=" << tr.frozenReplicas << "\n";
                os << "t,msd_u,msd_u_se,msd,msd_se,msd_u_over_2t\n";
                for (std::size_t i = 0; i < tr.times.size(); ++i)
                    os << formatDouble(tr.times[i]) << "," << formatDouble(tr.msdU[i]) << ","
                       << formatDouble(tr.msdUErr[i]) << "," << formatDouble(tr.msdNorm[i]) << ","
                       << formatDouble(tr.msdNormErr[i]) << "," << formatDouble(tr.msdU[i] / (2 * tr.times[i]))
                       << "\n";
            }
            out.emit(os.str());
            return 0;
        }
        if (*sm) {
            auto m = resolveModel(modelName);
            const bool reservoir = boundaryName == "reservoir";
            const Domain d(m.dim(), L, reservoir ? Boundary::Empty : parseBoundary(boundaryName));
            auto init = sampleEquilibrium(d, q, seed);
            Simulator s(m, init, seed, reservoir ? std::optional<double>(q) : std::nullopt, 1);
            Observable obs = densityObservable();
            if (observable.rfind("site:", 0) == 0) {
                const int i = std::stoi(observable.substr(5));
                if (i < 0 || i >= static_cast<int>(d.size())) throw ArgumentError("observable: site out of range");
                obs = siteObservable(i);
            } else if (observable != "density") {
                throw ArgumentError("observable: unknown '" + observable + "'");
            }
            auto ts = run(s, uniformSchedule(tMax / points, points), {obs}, RunOptions{true});
            json prov = provenance("simulate", args);
            prov["model_hash"] = m.hash();
            prov["events"] = s.events();
            out.emit(timeSeriesCsv(ts, headerLines(prov)));
            return 0;
        }
    } catch (const BudgetError& e) {
        std::cerr << "budget: " << e.what() << "\n";
        return kExitBudget;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ValidationError& e) {
        std::cerr << "validation: " << e.what() << "\n";
        return kExitValidation;
    } catch (const SpecError& e) {
        std::cerr << "spec: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
