use crate::network::NetworkModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    P,
    Q,
    L,
    Nu,
    Qg,
    Pbat,
    Cshp,
    Eshp,
    Ebat,
}

/// Column layout of a multi-period program.
///
/// Step-major: each local step `s < H` holds, in order, `P`, `Q`, `l` per line,
/// `nu` per non-root bus, `q_g` per capacitor bus, `p_bat` per battery, `c` per
/// shapeable load, then the states `e_shp` per load and `e_bat` per battery.
/// Step `H` holds only the states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableIndex {
    n_lines: usize,
    n_bus: usize,
    cap_buses: Vec<usize>,
    cap_pos: Vec<Option<usize>>,
    n_bat: usize,
    n_shp: usize,
    horizon: usize,
}

impl VariableIndex {
    pub fn new(model: &NetworkModel, n_shp: usize, horizon: usize) -> Self {
        let cap_buses = model.capacitor_buses().to_vec();
        let mut cap_pos = vec![None; model.n_buses()];
        for (i, &b) in cap_buses.iter().enumerate() {
            cap_pos[b] = Some(i);
        }
        Self {
            n_lines: model.n_lines(),
            n_bus: model.n_buses() - 1,
            cap_buses,
            cap_pos,
            n_bat: model.batteries().len(),
            n_shp,
            horizon,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_shapeable(&self) -> usize {
        self.n_shp
    }

    fn control_len(&self) -> usize {
        3 * self.n_lines + self.n_bus + self.cap_buses.len() + self.n_bat + self.n_shp
    }

    fn stride(&self) -> usize {
        self.control_len() + self.n_shp + self.n_bat
    }

    pub fn num_vars(&self) -> usize {
        self.horizon * self.stride() + self.n_shp + self.n_bat
    }

    fn base(&self, s: usize) -> usize {
        assert!(s < self.horizon, "step {s} outside horizon {}", self.horizon);
        s * self.stride()
    }

    pub fn p(&self, line: usize, s: usize) -> usize {
        self.base(s) + line
    }

    pub fn q(&self, line: usize, s: usize) -> usize {
        self.base(s) + self.n_lines + line
    }

    pub fn l(&self, line: usize, s: usize) -> usize {
        self.base(s) + 2 * self.n_lines + line
    }

    /// Column of `nu` at a non-root bus.
    pub fn nu(&self, bus: usize, s: usize) -> usize {
        assert!(bus >= 1 && bus <= self.n_bus, "bus {bus} has no voltage column");
        self.base(s) + 3 * self.n_lines + bus - 1
    }

    pub fn qg(&self, bus: usize, s: usize) -> Option<usize> {
        let pos = self.cap_pos.get(bus).copied().flatten()?;
        Some(self.base(s) + 3 * self.n_lines + self.n_bus + pos)
    }

    pub fn pbat(&self, battery: usize, s: usize) -> usize {
        self.base(s) + 3 * self.n_lines + self.n_bus + self.cap_buses.len() + battery
    }

    pub fn c(&self, load: usize, s: usize) -> usize {
        self.base(s)
            + 3 * self.n_lines
            + self.n_bus
            + self.cap_buses.len()
            + self.n_bat
            + load
    }

    fn state_base(&self, s: usize) -> usize {
        assert!(s <= self.horizon, "state step {s} beyond horizon");
        s * self.stride() + if s < self.horizon { self.control_len() } else { 0 }
    }

    pub fn e_shp(&self, load: usize, s: usize) -> usize {
        self.state_base(s) + load
    }

    pub fn e_bat(&self, battery: usize, s: usize) -> usize {
        self.state_base(s) + self.n_shp + battery
    }

    /// Inverse map: `(quantity, element, step)` where element is a line, bus,
    /// battery or load index as appropriate.
    pub fn decode(&self, col: usize) -> Option<(Quantity, usize, usize)> {
        if col >= self.num_vars() {
            return None;
        }
        let s = col / self.stride();
        let mut off = col % self.stride();
        if s == self.horizon {
            return Some(if off < self.n_shp {
                (Quantity::Eshp, off, s)
            } else {
                (Quantity::Ebat, off - self.n_shp, s)
            });
        }
        let blocks = [
            (Quantity::P, self.n_lines),
            (Quantity::Q, self.n_lines),
            (Quantity::L, self.n_lines),
            (Quantity::Nu, self.n_bus),
            (Quantity::Qg, self.cap_buses.len()),
            (Quantity::Pbat, self.n_bat),
            (Quantity::Cshp, self.n_shp),
            (Quantity::Eshp, self.n_shp),
            (Quantity::Ebat, self.n_bat),
        ];
        for (q, len) in blocks {
            if off < len {
                let element = match q {
                    Quantity::Nu => off + 1,
                    Quantity::Qg => self.cap_buses[off],
                    _ => off,
                };
                return Some((q, element, s));
            }
            off -= len;
        }
        unreachable!("offset within stride")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn layout_is_bijective() {
        let model = NetworkModel::new(fixtures::feeder12()).unwrap();
        let idx = VariableIndex::new(&model, 3, 4);
        let mut seen = vec![false; idx.num_vars()];
        let mut mark = |c: usize, want: (Quantity, usize, usize)| {
            assert!(!seen[c], "column {c} used twice");
            seen[c] = true;
            assert_eq!(idx.decode(c), Some(want));
        };
        for s in 0..4 {
            for li in 0..model.n_lines() {
                mark(idx.p(li, s), (Quantity::P, li, s));
                mark(idx.q(li, s), (Quantity::Q, li, s));
                mark(idx.l(li, s), (Quantity::L, li, s));
            }
            for b in 1..model.n_buses() {
                mark(idx.nu(b, s), (Quantity::Nu, b, s));
                if let Some(c) = idx.qg(b, s) {
                    mark(c, (Quantity::Qg, b, s));
                }
            }
            for bi in 0..model.batteries().len() {
                mark(idx.pbat(bi, s), (Quantity::Pbat, bi, s));
            }
            for j in 0..3 {
                mark(idx.c(j, s), (Quantity::Cshp, j, s));
            }
        }
        for s in 0..=4 {
            for j in 0..3 {
                mark(idx.e_shp(j, s), (Quantity::Eshp, j, s));
            }
            for bi in 0..model.batteries().len() {
                mark(idx.e_bat(bi, s), (Quantity::Ebat, bi, s));
            }
        }
        assert!(seen.iter().all(|v| *v));
        assert_eq!(idx.decode(idx.num_vars()), None);
    }
}
