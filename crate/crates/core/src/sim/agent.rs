use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{meters_per_deg_lon, Archetype, ArchetypeParams, CityModel, SimConfig, METERS_PER_DEG_LAT};
use crate::traj::{haversine_deg, TracePoint, DAY_WINDOW_START_S, SECONDS_PER_DAY, SECONDS_PER_HOUR};

type LatLon = (f64, f64);

struct Tracer<'a, R> {
    city: &'a CityModel,
    cfg: &'a SimConfig,
    rng: &'a mut R,
    noise: Option<Normal<f64>>,
    /// Drop every fix between local 00:00 and 06:00 (device off overnight).
    silent_night: bool,
    pos: LatLon,
    t: i64,
    end: i64,
    pts: Vec<TracePoint>,
}

impl<'a, R: Rng> Tracer<'a, R> {
    fn new(city: &'a CityModel, cfg: &'a SimConfig, rng: &'a mut R, start: LatLon, silent_night: bool) -> Self {
        Self {
            city,
            cfg,
            rng,
            noise: (city.road_noise_m > 0.0).then(|| Normal::new(0.0, city.road_noise_m).unwrap()),
            silent_night,
            pos: start,
            t: cfg.start_epoch,
            end: cfg.start_epoch + cfg.days as i64 * SECONDS_PER_DAY,
            pts: Vec::new(),
        }
    }

    fn at(&self, day: usize, hour: f64) -> i64 {
        self.cfg.start_epoch + day as i64 * SECONDS_PER_DAY + (hour * SECONDS_PER_HOUR as f64).round() as i64
    }

    fn second_of_day(&self, t: i64) -> i64 {
        self.cfg.offset.second_of_day(t)
    }

    fn hour(&self) -> f64 {
        self.second_of_day(self.t) as f64 / SECONDS_PER_HOUR as f64
    }

    fn done(&self) -> bool {
        self.t >= self.end
    }

    fn emit(&mut self, t: i64, (lat, lon): LatLon) {
        if t >= self.end || (self.silent_night && self.second_of_day(t) < DAY_WINDOW_START_S) {
            return;
        }
        let (lat, lon) = match self.noise {
            Some(n) => {
                let (dy, dx) = (n.sample(self.rng), n.sample(self.rng));
                self.city
                    .clamp(lat + dy / METERS_PER_DEG_LAT, lon + dx / meters_per_deg_lon(lat))
            }
            None => (lat, lon),
        };
        self.pts.push(TracePoint::new(lat, lon, t));
    }

    /// First multiple of `step` strictly after `t`.
    fn next_tick(t: i64, step: i64) -> i64 {
        (t.div_euclid(step) + 1) * step
    }

    fn drive_to(&mut self, dest: LatLon, speed_kmh: f64) {
        let km = haversine_deg(self.pos.0, self.pos.1, dest.0, dest.1);
        let duration = (km / speed_kmh * SECONDS_PER_HOUR as f64).max(1.0);
        let start = self.t;
        let arrival = start + duration.round() as i64;
        let period = self.cfg.sampling_period_s;
        let mut tick = Self::next_tick(start, period);
        let from = self.pos;
        while tick <= arrival && tick < self.end {
            let f = (tick - start) as f64 / duration;
            let f = f.min(1.0);
            self.emit(tick, (from.0 + f * (dest.0 - from.0), from.1 + f * (dest.1 - from.1)));
            tick += period;
        }
        self.pos = dest;
        self.t = arrival;
    }

    /// Waits in place until `until`. An idling vehicle reports every sampling
    /// period; a parked one only sends a heartbeat during 06:00–24:00.
    fn stay_until(&mut self, until: i64, engine_on: bool) {
        let until = until.min(self.end);
        if until <= self.t {
            return;
        }
        let step = if engine_on {
            self.cfg.sampling_period_s
        } else {
            self.cfg.parked_heartbeat_s
        };
        let mut tick = Self::next_tick(self.t, step);
        while tick <= until {
            if engine_on || self.second_of_day(tick) >= DAY_WINDOW_START_S {
                self.emit(tick, self.pos);
            }
            tick += step;
        }
        self.t = until;
    }

    fn uniform(&mut self, (lo, hi): (f64, f64)) -> f64 {
        if hi > lo {
            self.rng.random_range(lo..hi)
        } else {
            lo
        }
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    fn trip_endpoint(&mut self, params: &ArchetypeParams) -> LatLon {
        if self.chance(params.hotspot_bias) {
            self.city.hotspot_point(self.rng, params.hotspot_spread_m)
        } else {
            self.city.area_point(self.rng, params.roam_spread)
        }
    }

    fn near(&mut self, p: LatLon, sigma_m: f64) -> LatLon {
        self.city.jitter(self.rng, p, sigma_m)
    }

    /// One passenger job: wait, approach a nearby pick-up, deliver.
    fn passenger_trip(&mut self, params: &ArchetypeParams, idle_minutes: (f64, f64), speed: f64, cruise: bool) {
        let idle = self.uniform(idle_minutes) * 60.0;
        let until = self.t + idle as i64;
        if cruise {
            let spot = self.near(self.pos, 1000.0);
            self.drive_to(spot, 15.0);
        }
        self.stay_until(until, true);
        let pickup = self.near(self.pos, 2500.0);
        self.drive_to(pickup, speed);
        let dest = self.trip_endpoint(params);
        self.drive_to(dest, speed);
    }

    /// Drives to `dest` via a slightly jittered midpoint.
    fn commute(&mut self, dest: LatLon, speed: f64) {
        let mid = ((self.pos.0 + dest.0) / 2.0, (self.pos.1 + dest.1) / 2.0);
        let mid = self.near(mid, 300.0);
        self.drive_to(mid, speed);
        self.drive_to(dest, speed);
    }

    fn errand(&mut self, home: LatLon, params: &ArchetypeParams, speed: f64, depart: i64, stay_min: (f64, f64)) {
        self.stay_until(depart, false);
        let spot = if self.chance(params.hotspot_bias) {
            self.city.hotspot_point(self.rng, params.hotspot_spread_m)
        } else {
            self.near(home, params.errand_radius_m)
        };
        self.drive_to(spot, speed);
        let stay = self.uniform(stay_min) * 60.0;
        let back = self.t + stay as i64;
        self.stay_until(back, false);
        self.drive_to(home, speed);
    }
}

pub(super) fn simulate_vehicle<R: Rng>(
    city: &CityModel,
    params: &ArchetypeParams,
    cfg: &SimConfig,
    rng: &mut R,
) -> Vec<TracePoint> {
    match params.archetype {
        Archetype::Taxi => taxi(city, params, cfg, rng),
        Archetype::Bus => bus(city, params, cfg, rng),
        Archetype::Ridesourcing => ridesourcing(city, params, cfg, rng),
        Archetype::Commuter => commuter(city, params, cfg, rng),
        Archetype::Occasional => occasional(city, params, cfg, rng),
    }
}

fn taxi<R: Rng>(city: &CityModel, params: &ArchetypeParams, cfg: &SimConfig, rng: &mut R) -> Vec<TracePoint> {
    let start = city.hotspot_point(rng, params.hotspot_spread_m);
    let mut tr = Tracer::new(city, cfg, rng, start, false);
    let speed = tr.uniform(params.speed_kmh);
    let mut rests = Vec::with_capacity(cfg.days);
    let mut pace = Vec::with_capacity(cfg.days);
    for day in 0..cfg.days {
        let from = tr.uniform((0.0, 20.0));
        let len = tr.uniform((1.0, 6.0));
        rests.push((tr.at(day, from), tr.at(day, from + len)));
        pace.push(tr.uniform((0.8, 1.2)));
    }
    while !tr.done() {
        let day = ((tr.t - cfg.start_epoch) / SECONDS_PER_DAY) as usize;
        let (rest_from, rest_to) = rests[day.min(cfg.days - 1)];
        if (rest_from..rest_to).contains(&tr.t) {
            tr.stay_until(rest_to, false);
            continue;
        }
        let v = speed * pace[day.min(cfg.days - 1)];
        let night = tr.hour() < 6.0;
        let (idle, v) = if night {
            ((15.0, 45.0), v * 1.4)
        } else {
            (params.idle_minutes, v)
        };
        tr.passenger_trip(params, idle, v, true);
    }
    tr.pts
}

fn ridesourcing<R: Rng>(city: &CityModel, params: &ArchetypeParams, cfg: &SimConfig, rng: &mut R) -> Vec<TracePoint> {
    let home = city.central_point(rng);
    let home = city.jitter(rng, home, 3000.0);
    let mut tr = Tracer::new(city, cfg, rng, home, true);
    let speed = tr.uniform(params.speed_kmh);
    let (a, b) = params.active_hours;
    let hours = tr.uniform(params.session_hours).min(b - a);
    let day_p = params.day_probability * tr.uniform((0.7, 1.0));
    for day in 0..cfg.days {
        if tr.chance(day_p) {
            let len = (hours + tr.uniform((-1.0, 1.0))).clamp(1.0, b - a);
            let begin = tr.uniform((a, b - len));
            let begin = tr.at(day, begin);
            let finish = begin + (len * SECONDS_PER_HOUR as f64) as i64;
            tr.stay_until(begin, false);
            while tr.t < finish {
                tr.passenger_trip(params, params.idle_minutes, speed, false);
            }
            tr.drive_to(home, speed);
        } else if tr.chance(0.5) {
            let depart = tr.uniform((9.0, 19.0));
            let depart = tr.at(day, depart);
            tr.errand(home, params, speed, depart, (30.0, 120.0));
        }
    }
    tr.stay_until(tr.end, false);
    tr.pts
}

fn commuter<R: Rng>(city: &CityModel, params: &ArchetypeParams, cfg: &SimConfig, rng: &mut R) -> Vec<TracePoint> {
    let home = city.central_point(rng);
    let home = city.jitter(rng, home, 4000.0);
    let work = if rng.random::<f64>() < params.hotspot_bias {
        city.hotspot_point(rng, 800.0)
    } else {
        city.central_point(rng)
    };
    let mut tr = Tracer::new(city, cfg, rng, home, true);
    let speed = tr.uniform(params.speed_kmh);
    let leave = tr.uniform((params.active_hours.0, params.active_hours.0 + 2.0));
    let back = tr.uniform((params.active_hours.1 - 2.0, params.active_hours.1));
    let errand_p = tr.uniform((0.0, 0.4));
    for day in 0..cfg.days {
        if tr.chance(params.day_probability) {
            let go = leave + tr.uniform((-0.25, 0.25));
            let ret = back + tr.uniform((-0.25, 0.25));
            let go = tr.at(day, go);
            let ret = tr.at(day, ret);
            tr.stay_until(go, false);
            tr.commute(work, speed);
            tr.stay_until(ret, false);
            tr.commute(home, speed);
            if tr.chance(errand_p) {
                let depart = tr.t + tr.uniform((1800.0, 5400.0)) as i64;
                tr.errand(home, params, speed, depart, (30.0, 60.0));
            }
        } else if tr.chance(0.4) {
            let depart = tr.uniform((10.0, 17.0));
            let depart = tr.at(day, depart);
            tr.errand(home, params, speed, depart, (60.0, 180.0));
        }
    }
    tr.stay_until(tr.end, false);
    tr.pts
}

fn occasional<R: Rng>(city: &CityModel, params: &ArchetypeParams, cfg: &SimConfig, rng: &mut R) -> Vec<TracePoint> {
    let home = city.central_point(rng);
    let home = city.jitter(rng, home, 4000.0);
    let mut tr = Tracer::new(city, cfg, rng, home, true);
    let speed = tr.uniform(params.speed_kmh);
    for day in 0..cfg.days {
        let trips = if tr.chance(params.day_probability) {
            1 + usize::from(tr.chance(0.4))
        } else {
            0
        };
        let mut earliest = 8.0;
        for _ in 0..trips {
            let hour = tr.uniform((earliest, 20.0));
            let depart = tr.at(day, hour).max(tr.t);
            tr.errand(home, params, speed, depart, params.idle_minutes);
            earliest = tr.hour().max(earliest) + 0.5;
            if earliest >= 20.0 {
                break;
            }
        }
    }
    tr.stay_until(tr.end, false);
    tr.pts
}

fn bus_route<R: Rng>(city: &CityModel, rng: &mut R, from: LatLon, mut heading: f64, n_stops: usize) -> Vec<LatLon> {
    let mut stop = from;
    let mut route = vec![stop];
    for _ in 1..n_stops {
        heading += rng.random_range(-0.5..0.5);
        let step_m = rng.random_range(800.0..1600.0);
        stop = city.clamp(
            stop.0 + step_m * heading.cos() / METERS_PER_DEG_LAT,
            stop.1 + step_m * heading.sin() / meters_per_deg_lon(stop.0),
        );
        route.push(stop);
    }
    route
}

fn bus<R: Rng>(city: &CityModel, params: &ArchetypeParams, cfg: &SimConfig, rng: &mut R) -> Vec<TracePoint> {
    let depot = city.central_point(rng);
    let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let n_stops = rng.random_range(15..=25);
    let main = bus_route(city, rng, depot, heading, n_stops);
    let branch = n_stops / 2;
    let turn = if rng.random::<bool>() { 1.2 } else { -1.2 };
    let mut variant = main[..branch].to_vec();
    variant.extend(bus_route(city, rng, main[branch - 1], heading + turn, n_stops - branch + 1).into_iter().skip(1));
    let mut tr = Tracer::new(city, cfg, rng, depot, true);
    let speed = tr.uniform(params.speed_kmh);
    let first = params.active_hours.0 + tr.uniform((0.0, 0.5));
    for day in 0..cfg.days {
        let route = if tr.chance(params.route_variant_share) { &variant } else { &main };
        let v = speed * tr.uniform((0.85, 1.15));
        let depart = first + tr.uniform((-0.25, 0.25));
        let depart = tr.at(day, depart);
        let close = tr.at(day, params.active_hours.1);
        tr.pos = route[0];
        tr.stay_until(depart, false);
        let mut forward = true;
        while tr.t < close {
            let legs: Vec<LatLon> = if forward {
                route[1..].to_vec()
            } else {
                route[..route.len() - 1].iter().rev().copied().collect()
            };
            for s in legs {
                tr.drive_to(s, v);
                let dwell = tr.t + 30;
                tr.stay_until(dwell, true);
            }
            let layover = tr.uniform(params.idle_minutes) * 60.0;
            let until = tr.t + layover as i64;
            tr.stay_until(until, true);
            forward = !forward;
        }
        if !forward {
            for s in route[..route.len() - 1].iter().rev().copied().collect::<Vec<_>>() {
                tr.drive_to(s, v);
            }
        }
    }
    tr.stay_until(tr.end, false);
    tr.pts
}
