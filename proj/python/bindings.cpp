#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "evoforge/cli.hpp"
#include "evoforge/error.hpp"
#include "evoforge/fraction.hpp"
#include "evoforge/gateway.hpp"
#include "evoforge/metrics.hpp"
#include "evoforge/prompts.hpp"
#include "evoforge/simlab.hpp"

namespace py = pybind11;
using namespace evoforge;

namespace {

// JSON crosses the boundary as text; the stdlib json module does the Python side.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& obj) { return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>()); }

py::dict prompt_dict(const PromptMessage& msg) {
  py::dict d;
  d["role"] = std::string(to_string(msg.role));
  d["text"] = msg.text();
  d["images"] = msg.images();
  return d;
}

ReasoningPath path_from_text(const Problem& p, const std::string& text) {
  return make_path(p.id, text, Producer::student, Stage::evolve(1));
}

py::dict report_dict(const RoundReport& r) {
  py::dict d;
  d["stage"] = r.stage;
  d["index"] = r.index;
  d["judged"] = r.n_judged;
  d["correct"] = r.n_correct;
  d["accuracy"] = r.accuracy ? py::cast(r.accuracy->str()) : py::none();
  if (r.transition) {
    const auto& c = r.transition->counts;
    d["transition"] = py::dict(py::arg("c_c") = c.correct_correct, py::arg("c_i") = c.correct_incorrect,
                               py::arg("i_c") = c.incorrect_correct, py::arg("i_i") = c.incorrect_incorrect);
  } else {
    d["transition"] = py::none();
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "evoforge core: verdict parsing, prompts, exact fractions, simulation and the CLI";

  static py::exception<Error> error_type(m, "EvoforgeError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::handle(error_type)(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      inst.attr("exit_code") = e.exit_code();
      inst.attr("detail") = to_py(e.detail());
      PyErr_SetObject(error_type.ptr(), inst.ptr());
    }
  });

  py::class_<Fraction>(m, "Fraction")
      .def(py::init<std::int64_t, std::int64_t>(), py::arg("num"), py::arg("den") = 1)
      .def_static("parse", &Fraction::parse, py::arg("text"))
      .def_property_readonly("num", &Fraction::num)
      .def_property_readonly("den", &Fraction::den)
      .def("decimal", &Fraction::decimal, py::arg("places"))
      .def("__float__", &Fraction::to_double)
      .def("__str__", &Fraction::str)
      .def("__repr__", [](const Fraction& f) { return "Fraction(" + f.str() + ")"; })
      .def("__hash__", [](const Fraction& f) { return py::hash(py::make_tuple(f.num(), f.den())); })
      .def(py::self == py::self)
      .def(py::self < py::self)
      .def(py::self <= py::self)
      .def(py::self + py::self)
      .def(py::self - py::self)
      .def(py::self * py::self)
      .def(py::self / py::self);

  m.attr("ANSWER_MARKER") = std::string(kAnswerMarker);

  m.def(
      "parse_verdict",
      [](const std::string& text, const std::string& problem_id, const std::string& judge_tag, int round) {
        const auto r = parse_verdict(text, {problem_id, judge_tag, round});
        py::dict d;
        d["ok"] = r.ok();
        d["verdict"] = r.verdict ? to_py(json(*r.verdict)) : py::none();
        d["diagnostics"] = r.diagnostics;
        d["failure_reason"] = r.failure_reason;
        return d;
      },
      py::arg("text"), py::arg("problem_id") = "", py::arg("judge_tag") = "", py::arg("round") = 0,
      "Parses a judge reply into {ok, verdict, diagnostics, failure_reason}.");
  m.def(
      "serialize_verdict", [](const py::dict& verdict) { return serialize_verdict(from_py(verdict).get<OrmVerdict>()); },
      py::arg("verdict"));
  m.def(
      "extract_final_answer", [](const std::string& text) { return extract_final_answer(text); }, py::arg("text"));
  m.def("canonicalize_answer", &canonicalize_answer, py::arg("answer"));

  m.def(
      "solve_prompt", [](const py::dict& problem) { return prompt_dict(build_solve_prompt(from_py(problem).get<Problem>())); },
      py::arg("problem"));
  m.def(
      "judge_prompt",
      [](const py::dict& problem, const std::string& solution) {
        const auto p = from_py(problem).get<Problem>();
        return prompt_dict(build_judge_prompt(p, path_from_text(p, solution)));
      },
      py::arg("problem"), py::arg("solution"));
  m.def(
      "reflection_prompt",
      [](const py::dict& problem, const std::string& solution, const py::dict& verdict) {
        const auto p = from_py(problem).get<Problem>();
        return prompt_dict(build_reflection_prompt(p, path_from_text(p, solution), from_py(verdict).get<OrmVerdict>()));
      },
      py::arg("problem"), py::arg("solution"), py::arg("verdict"));

  m.def(
      "simulate",
      [](const py::dict& params, const std::string& run_dir, int rounds, const std::string& schedule, int max_attempts,
         bool emit_report) {
        WorldParams wp = from_py(params).get<WorldParams>();
        SimRunOptions opts;
        opts.run_dir = run_dir;
        opts.rounds = rounds;
        if (schedule == "per-round") opts.reflection_schedule = ReflectionSchedule::per_round;
        else if (schedule != "after-all-rounds") throw Error(ErrorCode::validation, "unknown reflection schedule", {{"schedule", schedule}});
        opts.max_attempts = max_attempts;
        opts.emit_report = emit_report;
        SimulationResult r;
        {
          py::gil_scoped_release release;
          r = run_simulation(make_world(wp), opts);
        }
        py::dict d;
        d["manifest_digest"] = r.manifest.digest;
        d["sft_records"] = r.sft_records;
        d["truly_wrong_records"] = r.truly_wrong_records;
        d["final_skill"] = r.final_skill;
        d["elapsed_ms"] = r.elapsed.count();
        py::list violations, reports;
        for (const auto& v : r.violations) violations.append(py::make_tuple(v.rule, v.detail));
        for (const auto& rep : r.reports) reports.append(report_dict(rep));
        d["violations"] = violations;
        d["reports"] = reports;
        return d;
      },
      py::arg("params"), py::arg("run_dir"), py::arg("rounds") = 3, py::arg("schedule") = "after-all-rounds",
      py::arg("max_attempts") = 0, py::arg("emit_report") = true,
      "Runs a synthetic-world simulation through the real engine and returns a summary dict.");

  m.def(
      "round_reports",
      [](const std::string& run_dir) {
        py::list out;
        for (const auto& r : round_reports(run_dir)) out.append(report_dict(r));
        return out;
      },
      py::arg("run_dir"));

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = dispatch(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one evoforge command line; returns (exit_code, stdout, stderr).");
}
