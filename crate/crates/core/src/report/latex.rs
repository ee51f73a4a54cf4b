//! LaTeX output: one file per section plus `main.tex`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::{FigureAnalysis, ReportError, ReportSection, NO_FIGURES_NOTICE};
use crate::model::store::MAIN_TEX;
use crate::model::SectionKind;
use crate::util;

/// Title block for `main.tex`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentMeta {
    pub title: String,
    pub run_id: String,
}

const PREAMBLE: &str = r"\documentclass[11pt]{article}
\usepackage[margin=1in]{geometry}
\usepackage{graphicx}
\usepackage{amsmath}
\graphicspath{{../plots/}}
\newsavebox{\highlightsavebox}
\newenvironment{highlightbox}
  {\begin{lrbox}{\highlightsavebox}\begin{minipage}{0.94\linewidth}\textbf{Highlights.}\ }
  {\end{minipage}\end{lrbox}\begin{center}\fbox{\usebox{\highlightsavebox}}\end{center}}
";

/// Escapes text for use outside math mode.
pub fn latex_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str(r"\textbackslash{}"),
            '{' | '}' | '$' | '&' | '#' | '_' | '%' => {
                out.push('\\');
                out.push(c);
            }
            '~' => out.push_str(r"\textasciitilde{}"),
            '^' => out.push_str(r"\textasciicircum{}"),
            _ => out.push(c),
        }
    }
    out
}

fn figure_environment(analysis: &FigureAnalysis) -> String {
    let name = analysis
        .figure_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = analysis
        .figure_path
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let label: String = stem.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect();
    format!(
        "\\begin{{figure}}[htbp]\n\\centering\n\\includegraphics[width=0.8\\linewidth]{{{name}}}\n\\caption{{{}}}\n\\label{{fig:{label}}}\n\\end{{figure}}\n",
        latex_escape(&analysis.caption)
    )
}

fn section_file(section: &ReportSection, analyses: &[FigureAnalysis]) -> String {
    let mut out = format!(
        "\\section{{{}}}\n\\begin{{highlightbox}}\n{}\n\\end{{highlightbox}}\n\n{}\n",
        section.kind.title(),
        section.highlight_box.trim(),
        section.body.trim()
    );
    if section.kind == SectionKind::Results {
        out.push('\n');
        if analyses.is_empty() {
            out.push_str(&format!("\\paragraph{{Figures.}} {NO_FIGURES_NOTICE}\n"));
        }
        for analysis in analyses {
            out.push_str(&figure_environment(analysis));
            out.push('\n');
        }
    }
    out
}

/// Writes `<section>.tex` for each section and a `main.tex` that includes
/// them in document order. Figures are placed in the Results section.
pub fn assemble_document(
    report_dir: &Path,
    sections: &[ReportSection],
    analyses: &[FigureAnalysis],
    meta: &DocumentMeta,
) -> Result<Vec<PathBuf>, ReportError> {
    let mut ordered = Vec::with_capacity(SectionKind::ALL.len());
    for kind in SectionKind::ALL {
        let section = sections
            .iter()
            .find(|s| s.kind == kind)
            .ok_or(ReportError::MissingSection(kind))?;
        ordered.push(section);
    }
    fs::create_dir_all(report_dir)?;
    let mut written = Vec::new();
    for section in &ordered {
        let path = report_dir.join(format!("{}.tex", section.kind.file_stem()));
        util::write_atomic(&path, section_file(section, analyses).as_bytes())?;
        written.push(path);
    }
    let mut main = String::from(PREAMBLE);
    main.push_str(&format!(
        "\\title{{{}}}\n\\author{{Run {}}}\n\\date{{}}\n\n\\begin{{document}}\n\\maketitle\n\n",
        latex_escape(&meta.title),
        latex_escape(&meta.run_id)
    ));
    for section in &ordered {
        main.push_str(&format!("\\input{{{}}}\n", section.kind.file_stem()));
    }
    main.push_str("\n\\end{document}\n");
    let main_path = report_dir.join(MAIN_TEX);
    util::write_atomic(&main_path, main.as_bytes())?;
    written.push(main_path);
    Ok(written)
}

/// Tries the LaTeX engines found on `PATH`. Returns the PDF path, `Ok(None)`
/// when no engine is installed, and `Err` with a diagnostic when compilation
/// failed.
pub fn compile_document(report_dir: &Path) -> Result<Option<PathBuf>, String> {
    let engines: [(&str, &[&str]); 3] = [
        ("latexmk", &["-pdf", "-interaction=nonstopmode", "-halt-on-error", MAIN_TEX]),
        ("pdflatex", &["-interaction=nonstopmode", "-halt-on-error", MAIN_TEX]),
        ("tectonic", &[MAIN_TEX]),
    ];
    let Some((engine, args)) = engines.iter().find(|(name, _)| util::find_on_path(name).is_some()) else {
        return Ok(None);
    };
    let output = Command::new(engine)
        .args(*args)
        .current_dir(report_dir)
        .output()
        .map_err(|e| format!("{engine}: {e}"))?;
    let pdf = report_dir.join("main.pdf");
    if output.status.success() && pdf.is_file() {
        Ok(Some(pdf))
    } else {
        let log = String::from_utf8_lossy(&output.stdout);
        Err(format!("{engine} failed: {}", util::tail(&log, 1000)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sections() -> Vec<ReportSection> {
        SectionKind::ALL
            .iter()
            .rev()
            .map(|&kind| ReportSection {
                kind,
                body: format!("Body of {}.", kind.title()),
                highlight_box: format!("Box of {}.", kind.title()),
            })
            .collect()
    }

    fn analysis(name: &str, caption: &str) -> FigureAnalysis {
        FigureAnalysis {
            figure_path: PathBuf::from("/run/plots").join(name),
            caption: caption.into(),
            interpretation: "i".into(),
            key_insights: vec!["k".into()],
        }
    }

    fn meta() -> DocumentMeta {
        DocumentMeta {
            title: "Force & structure_100%".into(),
            run_id: "r1".into(),
        }
    }

    #[test]
    fn escaping_covers_specials() {
        assert_eq!(latex_escape("a_b & 50% {x} $y #z ~ ^ \\"), r"a\_b \& 50\% \{x\} \$y \#z \textasciitilde{} \textasciicircum{} \textbackslash{}");
    }

    #[test]
    fn main_includes_sections_in_document_order() {
        let dir = tempfile::tempdir().unwrap();
        assemble_document(dir.path(), &sections(), &[], &meta()).unwrap();
        let main = fs::read_to_string(dir.path().join(MAIN_TEX)).unwrap();
        let inputs: Vec<&str> = main
            .lines()
            .filter_map(|l| l.strip_prefix("\\input{").and_then(|r| r.strip_suffix('}')))
            .collect();
        let expected: Vec<&str> = SectionKind::ALL.iter().map(|k| k.file_stem()).collect();
        assert_eq!(inputs, expected);
        assert!(main.contains(r"Force \& structure\_100\%"));
    }

    #[test]
    fn each_figure_gets_one_captioned_environment() {
        let dir = tempfile::tempdir().unwrap();
        let analyses = vec![analysis("force.png", "Force vs beta"), analysis("rmsd.pdf", "RMSD_max trend")];
        assemble_document(dir.path(), &sections(), &analyses, &meta()).unwrap();
        let results = fs::read_to_string(dir.path().join("results.tex")).unwrap();
        for a in &analyses {
            let name = a.figure_path.file_name().unwrap().to_string_lossy().into_owned();
            let needle = format!("\\includegraphics[width=0.8\\linewidth]{{{name}}}");
            assert_eq!(results.matches(&needle).count(), 1);
        }
        assert_eq!(results.matches("\\begin{figure}").count(), 2);
        assert!(results.contains(r"\caption{RMSD\_max trend}"));
        assert!(!results.contains(NO_FIGURES_NOTICE));
    }

    #[test]
    fn figureless_results_carry_the_notice() {
        let dir = tempfile::tempdir().unwrap();
        assemble_document(dir.path(), &sections(), &[], &meta()).unwrap();
        let results = fs::read_to_string(dir.path().join("results.tex")).unwrap();
        assert!(results.contains(NO_FIGURES_NOTICE));
    }

    #[test]
    fn every_section_opens_with_its_highlight_box() {
        let dir = tempfile::tempdir().unwrap();
        assemble_document(dir.path(), &sections(), &[], &meta()).unwrap();
        for kind in SectionKind::ALL {
            let text = fs::read_to_string(dir.path().join(format!("{}.tex", kind.file_stem()))).unwrap();
            let mut lines = text.lines();
            assert!(lines.next().unwrap().starts_with("\\section{"));
            assert_eq!(lines.next().unwrap(), "\\begin{highlightbox}");
        }
    }

    #[test]
    fn missing_section_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let four: Vec<_> = sections().into_iter().filter(|s| s.kind != SectionKind::Outlook).collect();
        assert!(matches!(
            assemble_document(dir.path(), &four, &[], &meta()),
            Err(ReportError::MissingSection(SectionKind::Outlook))
        ));
        assert!(!dir.path().join(MAIN_TEX).exists());
    }
}
