//! Scenario files: `key = value` lines grouped under `[section]` headers.
//!
//! `#` and `;` start comments. `[fluid]`, `[obstacle]` and `[camera]` may
//! repeat; each occurrence adds one item, and the first occurrence of a
//! kind replaces whatever the base scenario had. The full key list is in
//! `docs/config.md`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use apbf_core::{DVec3, InactiveLambda, IterationRange, SdfPrimitive, SolverMode};

use crate::error::{HarnessError, Result};
use crate::scenario::{builtin_scenario, scaled_count, FluidBlock, ScenarioSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    /// Key, value and line number.
    pub entries: Vec<(String, String, usize)>,
}

/// Splits `text` into sections. Keys before the first header land in an
/// unnamed section.
pub fn parse_sections(text: &str, path: &str) -> Result<Vec<Section>> {
    let err = |line: usize, message: String| HarnessError::Config {
        path: path.to_string(),
        line,
        message,
    };
    let mut sections = vec![Section {
        name: String::new(),
        line: 0,
        entries: Vec::new(),
    }];
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(line_no, format!("unterminated section header `{line}`")))?
                .trim();
            if name.is_empty() {
                return Err(err(line_no, "empty section name".into()));
            }
            sections.push(Section {
                name: name.to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err(line_no, "missing key".into()));
        }
        let current = sections.last_mut().unwrap();
        if current.entries.iter().any(|(key, _, _)| key == k) {
            return Err(err(line_no, format!("duplicate key `{k}`")));
        }
        current
            .entries
            .push((k.to_string(), v.to_string(), line_no));
    }
    Ok(sections)
}

struct Reader<'a> {
    path: &'a str,
}

impl Reader<'_> {
    fn err(&self, line: usize, message: String) -> HarnessError {
        HarnessError::Config {
            path: self.path.to_string(),
            line,
            message,
        }
    }

    fn parse<T: FromStr>(&self, key: &str, v: &str, line: usize) -> Result<T> {
        v.parse()
            .map_err(|_| self.err(line, format!("`{key}`: cannot parse `{v}`")))
    }

    fn vec3(&self, key: &str, v: &str, line: usize) -> Result<DVec3> {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(self.err(
                line,
                format!("`{key}` needs three comma-separated numbers, got `{v}`"),
            ));
        }
        Ok(DVec3::new(
            self.parse(key, parts[0], line)?,
            self.parse(key, parts[1], line)?,
            self.parse(key, parts[2], line)?,
        ))
    }

    fn counts(&self, key: &str, v: &str, line: usize) -> Result<[u32; 3]> {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(self.err(
                line,
                format!("`{key}` needs three comma-separated integers, got `{v}`"),
            ));
        }
        Ok([
            self.parse(key, parts[0], line)?,
            self.parse(key, parts[1], line)?,
            self.parse(key, parts[2], line)?,
        ])
    }

    fn bool(&self, key: &str, v: &str, line: usize) -> Result<bool> {
        match v {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.err(line, format!("`{key}`: expected true or false, got `{v}`"))),
        }
    }
}

fn lookup(section: &Section) -> BTreeMap<&str, (&str, usize)> {
    section
        .entries
        .iter()
        .map(|(k, v, l)| (k.as_str(), (v.as_str(), *l)))
        .collect()
}

/// Loads a scenario file. `scale` shrinks the per-axis counts of the
/// `[fluid]` blocks and is passed on to `base`.
pub fn load_scenario(path: &Path, scale: f64) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_scenario(&text, &path.display().to_string(), scale)
}

pub fn parse_scenario(text: &str, path: &str, scale: f64) -> Result<ScenarioSpec> {
    let r = Reader { path };
    let sections = parse_sections(text, path)?;

    let base = sections
        .iter()
        .filter(|s| s.name.is_empty() || s.name == "scenario")
        .flat_map(|s| s.entries.iter())
        .find(|(k, _, _)| k == "base");
    let mut spec = match base {
        Some((_, name, line)) => {
            builtin_scenario(name, scale).map_err(|e| r.err(*line, e.to_string()))?
        }
        None => {
            let mut s = builtin_scenario("dam_break", scale)?;
            s.blocks.clear();
            s.scene.primitives.clear();
            s.cameras.clear();
            s
        }
    };
    spec.scale = scale;
    if base.is_none() {
        spec.name = Path::new(path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
    }

    let (mut fluids, mut obstacles, mut cameras) = (false, false, false);
    let mut n_min = None;
    let mut n_max = None;
    let mut mode = None;

    for section in &sections {
        let map = lookup(section);
        let mut used = Vec::new();
        let mut get = |k: &'static str| {
            let v = map.get(k).copied();
            if v.is_some() {
                used.push(k);
            }
            v
        };
        match section.name.as_str() {
            "" | "scenario" => {
                get("base");
                if let Some((v, _)) = get("name") {
                    spec.name = v.to_string();
                }
                if let Some((v, l)) = get("frames") {
                    spec.frames = r.parse("frames", v, l)?;
                }
                if let Some((v, l)) = get("seed") {
                    spec.seed = r.parse("seed", v, l)?;
                }
                if let Some((v, l)) = get("spacing") {
                    spec.spacing = r.parse("spacing", v, l)?;
                }
                if let Some((v, l)) = get("jitter") {
                    spec.jitter = r.parse("jitter", v, l)?;
                }
                if let Some((v, l)) = get("settle_frames") {
                    spec.settle.max_frames = r.parse("settle_frames", v, l)?;
                }
                if let Some((v, l)) = get("settle_iterations") {
                    spec.settle.iterations = r.parse("settle_iterations", v, l)?;
                }
                if let Some((v, l)) = get("settle_tolerance") {
                    spec.settle.tolerance = r.parse("settle_tolerance", v, l)?;
                }
            }
            "solver" => {
                let c = &mut spec.solver;
                if let Some((v, l)) = get("dt_frame") {
                    c.dt_frame = r.parse("dt_frame", v, l)?;
                }
                if let Some((v, l)) = get("substeps") {
                    c.substeps = r.parse("substeps", v, l)?;
                }
                if let Some((v, l)) = get("n_min") {
                    n_min = Some(r.parse::<u32>("n_min", v, l)?);
                }
                if let Some((v, l)) = get("n_max") {
                    n_max = Some(r.parse::<u32>("n_max", v, l)?);
                }
                if let Some((v, l)) = get("rest_density") {
                    c.rest_density = r.parse("rest_density", v, l)?;
                }
                if let Some((v, l)) = get("h") {
                    c.h = r.parse("h", v, l)?;
                }
                if let Some((v, l)) = get("epsilon") {
                    c.epsilon = r.parse("epsilon", v, l)?;
                }
                if let Some((v, l)) = get("gravity") {
                    c.gravity = r.vec3("gravity", v, l)?;
                }
                if let Some((v, l)) = get("stab_iterations") {
                    c.stab_iterations = r.parse("stab_iterations", v, l)?;
                }
                if let Some((v, l)) = get("stab_threshold") {
                    c.stab_threshold = r.parse("stab_threshold", v, l)?;
                }
                if let Some((v, l)) = get("particle_radius") {
                    c.particle_radius = r.parse("particle_radius", v, l)?;
                }
                if let Some((v, l)) = get("velocity_cap") {
                    c.velocity_cap = Some(r.parse("velocity_cap", v, l)?);
                }
                if let Some((v, l)) = get("inactive_lambda") {
                    c.inactive_lambda = match v {
                        "frozen" => InactiveLambda::Frozen,
                        "zero" => InactiveLambda::Zero,
                        _ => {
                            return Err(r.err(
                                l,
                                format!("`inactive_lambda`: expected frozen or zero, got `{v}`"),
                            ))
                        }
                    };
                }
                if let Some((v, l)) = get("mode") {
                    mode = Some(match v {
                        "pbf" => SolverMode::Pbf,
                        "apbf" => SolverMode::Apbf,
                        _ => {
                            return Err(r.err(l, format!("`mode`: expected pbf or apbf, got `{v}`")))
                        }
                    });
                }
                if let Some((v, l)) = get("gradient_kernel") {
                    c.gradient = v
                        .parse()
                        .map_err(|e: apbf_core::Error| r.err(l, e.to_string()))?;
                }
                if let Some((v, l)) = get("gradient_step") {
                    spec.scene.gradient_step = r.parse("gradient_step", v, l)?;
                }
            }
            "lod" => {
                if let Some((v, l)) = get("model") {
                    spec.set_lod_model(
                        v.parse()
                            .map_err(|e: apbf_core::Error| r.err(l, e.to_string()))?,
                    );
                }
                if let Some((v, l)) = get("d_min") {
                    spec.lod.d_min = r.parse("d_min", v, l)?;
                }
                if let Some((v, l)) = get("d_max") {
                    spec.lod.d_max = r.parse("d_max", v, l)?;
                }
                if let Some((v, l)) = get("auto_range") {
                    spec.lod.auto_range = r.bool("auto_range", v, l)?;
                }
            }
            "camera" => {
                if !cameras {
                    spec.cameras.clear();
                    cameras = true;
                }
                let mut cam = crate::scenario::default_camera();
                if let Some((v, l)) = get("eye") {
                    cam.eye = r.vec3("eye", v, l)?;
                }
                if let Some((v, l)) = get("look_at") {
                    cam.look_at = r.vec3("look_at", v, l)?;
                }
                if let Some((v, l)) = get("up") {
                    cam.up = r.vec3("up", v, l)?;
                }
                if let Some((v, l)) = get("fov_deg") {
                    cam.vertical_fov = r.parse::<f64>("fov_deg", v, l)?.to_radians();
                }
                if let Some((v, l)) = get("width") {
                    cam.width = r.parse("width", v, l)?;
                }
                if let Some((v, l)) = get("height") {
                    cam.height = r.parse("height", v, l)?;
                }
                if let Some((v, l)) = get("near") {
                    cam.near = r.parse("near", v, l)?;
                }
                cam.validate()
                    .map_err(|e| r.err(section.line, e.to_string()))?;
                spec.cameras.push(cam);
            }
            "fluid" => {
                if !fluids {
                    spec.blocks.clear();
                    fluids = true;
                }
                let (ov, ol) = get("origin")
                    .ok_or_else(|| r.err(section.line, "[fluid] needs `origin`".into()))?;
                let (cv, cl) = get("counts")
                    .ok_or_else(|| r.err(section.line, "[fluid] needs `counts`".into()))?;
                let counts = r.counts("counts", cv, cl)?;
                if counts.contains(&0) {
                    return Err(r.err(cl, "`counts` must be >= 1 per axis".into()));
                }
                spec.blocks.push(FluidBlock {
                    origin: r.vec3("origin", ov, ol)?,
                    counts: counts.map(|c| scaled_count(c, scale)),
                });
            }
            "obstacle" => {
                if !obstacles {
                    spec.scene.primitives.clear();
                    obstacles = true;
                }
                let (kind, kl) = get("type")
                    .ok_or_else(|| r.err(section.line, "[obstacle] needs `type`".into()))?;
                let mut need = |k: &'static str| {
                    get(k)
                        .ok_or_else(|| r.err(section.line, format!("{kind} obstacle needs `{k}`")))
                };
                let prim = match kind {
                    "half_space" => {
                        let (n, nl) = need("normal")?;
                        let (o, ol) = need("offset")?;
                        let normal = r.vec3("normal", n, nl)?;
                        if !(normal.length() > 0.0) {
                            return Err(r.err(nl, "`normal` must be non-zero".into()));
                        }
                        SdfPrimitive::half_space(normal, r.parse("offset", o, ol)?)
                    }
                    "box" | "container" => {
                        let (a, al) = need("min")?;
                        let (b, bl) = need("max")?;
                        let (min, max) = (r.vec3("min", a, al)?, r.vec3("max", b, bl)?);
                        if !min.cmplt(max).all() {
                            return Err(r.err(bl, "`max` must exceed `min` on every axis".into()));
                        }
                        if kind == "box" {
                            SdfPrimitive::Box { min, max }
                        } else {
                            SdfPrimitive::Container { min, max }
                        }
                    }
                    "sphere" => {
                        let (c, cl) = need("center")?;
                        let (rad, rl) = need("radius")?;
                        SdfPrimitive::Sphere {
                            center: r.vec3("center", c, cl)?,
                            radius: r.parse("radius", rad, rl)?,
                        }
                    }
                    "cone" => {
                        let (c, cl) = need("base_center")?;
                        let (rad, rl) = need("radius")?;
                        let (ht, hl) = need("height")?;
                        SdfPrimitive::Cone {
                            base_center: r.vec3("base_center", c, cl)?,
                            radius: r.parse("radius", rad, rl)?,
                            height: r.parse("height", ht, hl)?,
                        }
                    }
                    _ => {
                        return Err(r.err(
                            kl,
                            format!("unknown obstacle type `{kind}` (half_space, box, container, sphere, cone)"),
                        ))
                    }
                };
                spec.scene.primitives.push(prim);
            }
            other => return Err(r.err(section.line, format!("unknown section `[{other}]`"))),
        }
        if let Some((k, _, l)) = section
            .entries
            .iter()
            .find(|(k, _, _)| !used.contains(&k.as_str()))
        {
            let name = if section.name.is_empty() {
                "scenario"
            } else {
                &section.name
            };
            return Err(r.err(*l, format!("unknown key `{k}` in [{name}]")));
        }
    }

    if n_min.is_some() || n_max.is_some() {
        let cur = spec.solver.range;
        let range =
            IterationRange::new(n_min.unwrap_or(cur.n_min()), n_max.unwrap_or(cur.n_max()))?;
        spec.set_range(range);
    }
    if let Some(m) = mode {
        spec.set_mode(m, None)?;
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let s = parse_sections("a = 1 # c\n\n[x]\n; note\nb= two\n[x]\nb = 3\n", "t").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].entries, vec![("a".into(), "1".into(), 1)]);
        assert_eq!(s[1].name, "x");
        assert_eq!(s[1].entries[0].1, "two");
        assert_eq!(s[2].entries[0].2, 7);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let e = parse_sections("[ok]\nnot a pair\n", "f.ini").unwrap_err();
        assert_eq!(
            e.to_string(),
            "f.ini:2: expected `key = value`, got `not a pair`"
        );
        assert!(parse_sections("[open\n", "f").is_err());
        assert!(parse_sections("a = 1\na = 2\n", "f").is_err());
    }

    #[test]
    fn base_with_overrides() {
        let text = "base = dam_break\nframes = 12\n[solver]\nn_min = 2\nepsilon = 1e-4\n[lod]\nmodel = dtc\n";
        let s = parse_scenario(text, "x.ini", 1.0 / 27.0).unwrap();
        assert_eq!(s.name, "dam_break");
        assert_eq!(s.frames, 12);
        assert_eq!(s.solver.range, IterationRange::new(2, 6).unwrap());
        assert_eq!(s.lod.range, s.solver.range);
        assert_eq!(s.solver.epsilon, 1e-4);
        assert_eq!(s.lod.model, apbf_core::LodModel::Dtc);
        assert_eq!(s.particle_count(), 8000);
    }

    #[test]
    fn custom_scene_from_scratch() {
        let text = "\
[scenario]
name = pool
[fluid]
origin = 0.05, 0.05, 0.05
counts = 4, 3, 2
[fluid]
origin = 1, 0.05, 0.05
counts = 1, 1, 1
[obstacle]
type = container
min = 0, 0, 0
max = 2, 2, 2
[obstacle]
type = cone
base_center = 1, 0, 1
radius = 0.3
height = 0.5
[camera]
eye = 1, 1, 5
look_at = 1, 0.5, 1
";
        let s = parse_scenario(text, "pool.ini", 1.0).unwrap();
        assert_eq!(s.name, "pool");
        assert_eq!(s.particle_count(), 25);
        assert_eq!(s.scene.primitives.len(), 2);
        assert_eq!(s.cameras.len(), 1);
        assert_eq!(s.cameras[0].eye, DVec3::new(1.0, 1.0, 5.0));
        s.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        let e = parse_scenario("base = dam_break\n[solver]\nfoo = 1\n", "a", 1.0).unwrap_err();
        assert!(e.to_string().contains("unknown key `foo`"), "{e}");
        assert!(parse_scenario("[weather]\nrain = 1\n", "a", 1.0).is_err());
        assert!(parse_scenario("base = nowhere\n", "a", 1.0).is_err());
        assert!(parse_scenario("[obstacle]\ntype = torus\n", "a", 1.0).is_err());
        assert!(parse_scenario("[fluid]\norigin = 0,0,0\n", "a", 1.0).is_err());
        assert!(parse_scenario("[solver]\nh = abc\n", "a", 1.0).is_err());
    }

    #[test]
    fn pbf_mode_in_file() {
        let s = parse_scenario(
            "base = multi_dam_break\n[solver]\nmode = pbf\n",
            "a",
            1.0 / 27.0,
        )
        .unwrap();
        assert_eq!(s.solver.mode, SolverMode::Pbf);
        assert_eq!(s.solver.range, IterationRange::uniform(8).unwrap());
    }
}
