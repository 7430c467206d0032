//! On/off water pump with a hysteresis band around the setpoint.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PumpHysteresis {
    /// Switch on when the absolute error exceeds this (K).
    pub on_band: f64,
    /// Switch off when the absolute error falls below this (K).
    pub off_band: f64,
    pub state: bool,
}

impl Default for PumpHysteresis {
    fn default() -> Self {
        PumpHysteresis {
            on_band: 0.3,
            off_band: 0.1,
            state: false,
        }
    }
}

impl PumpHysteresis {
    pub fn new(on_band: f64, off_band: f64) -> Self {
        debug_assert!(off_band <= on_band);
        PumpHysteresis {
            on_band,
            off_band,
            state: false,
        }
    }

    pub fn update(&mut self, measured: f64, commanded: f64) -> bool {
        let err = (measured - commanded).abs();
        if err > self.on_band {
            self.state = true;
        } else if err < self.off_band {
            self.state = false;
        }
        self.state
    }
}

pub fn pump_step(h: PumpHysteresis, measured: f64, commanded: f64) -> (PumpHysteresis, bool) {
    let mut next = h;
    let on = next.update(measured, commanded);
    (next, on)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switches_on_outside_band() {
        let (h, on) = pump_step(PumpHysteresis::new(0.3, 0.1), 23.0, 25.0);
        assert!(on && h.state);
    }

    #[test]
    fn switches_off_near_setpoint() {
        let mut h = PumpHysteresis::new(0.3, 0.1);
        h.state = true;
        let (_, on) = pump_step(h, 24.95, 25.0);
        assert!(!on);
    }

    #[test]
    fn holds_inside_band() {
        let mut h = PumpHysteresis::new(0.3, 0.1);
        h.state = true;
        assert!(h.update(24.8, 25.0));
        h.state = false;
        assert!(!h.update(24.8, 25.0));
    }

    #[test]
    fn oscillating_error_chatters() {
        let mut h = PumpHysteresis::new(0.05, 0.02);
        let mut toggles = 0;
        let mut last = h.state;
        for k in 0..40 {
            let meas = 25.0 + if k % 2 == 0 { 0.08 } else { 0.01 };
            let on = h.update(meas, 25.0);
            if on != last {
                toggles += 1;
            }
            last = on;
        }
        assert!(toggles >= 30);
    }
}
