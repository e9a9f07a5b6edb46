//! Watchdog safety monitor.
//!
//! Watches staleness of the command, state and localisation channels against
//! configured timeouts plus a consecutive-localisation-failure limit. An
//! abort latches until explicitly reset, at which point the vehicle is
//! assumed to be back under manual control.

use serde::{Deserialize, Serialize};

/// Channel timeouts in seconds. `localization` only applies during the
/// return phase (there is no localisation while learning).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyTimeouts {
    pub command_s: f64,
    pub state_s: f64,
    pub localization_s: f64,
    pub max_consecutive_localization_failures: u32,
}

impl Default for SafetyTimeouts {
    fn default() -> Self {
        Self {
            command_s: 0.5,
            state_s: 1.0,
            localization_s: 8.0,
            max_consecutive_localization_failures: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    CommandWatchdog,
    StateWatchdog,
    LocalizationWatchdog,
    LocalizationFailures,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AbortReason::CommandWatchdog => "command-watchdog",
            AbortReason::StateWatchdog => "state-watchdog",
            AbortReason::LocalizationWatchdog => "localization-watchdog",
            AbortReason::LocalizationFailures => "localization-failures",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyStatus {
    Ok,
    Abort(AbortReason),
}

/// Stateless staleness evaluation of all monitored channels at time `now`.
///
/// `last_localization` is `None` while learning, disabling that channel.
pub fn safety_check(
    last_command: f64,
    last_localization: Option<f64>,
    last_state: f64,
    now: f64,
    timeouts: &SafetyTimeouts,
    consecutive_localization_failures: u32,
) -> SafetyStatus {
    if now - last_command > timeouts.command_s {
        return SafetyStatus::Abort(AbortReason::CommandWatchdog);
    }
    if now - last_state > timeouts.state_s {
        return SafetyStatus::Abort(AbortReason::StateWatchdog);
    }
    if let Some(last_loc) = last_localization {
        if now - last_loc > timeouts.localization_s {
            return SafetyStatus::Abort(AbortReason::LocalizationWatchdog);
        }
    }
    if consecutive_localization_failures >= timeouts.max_consecutive_localization_failures {
        return SafetyStatus::Abort(AbortReason::LocalizationFailures);
    }
    SafetyStatus::Ok
}

/// Latching wrapper: after the first abort every check reports the same
/// abort until [`SafetyMonitor::reset`].
#[derive(Debug, Clone)]
pub struct SafetyMonitor {
    pub timeouts: SafetyTimeouts,
    latched: Option<AbortReason>,
}

impl SafetyMonitor {
    pub fn new(timeouts: SafetyTimeouts) -> Self {
        Self {
            timeouts,
            latched: None,
        }
    }

    pub fn check(
        &mut self,
        last_command: f64,
        last_localization: Option<f64>,
        last_state: f64,
        now: f64,
        consecutive_localization_failures: u32,
    ) -> SafetyStatus {
        if let Some(reason) = self.latched {
            return SafetyStatus::Abort(reason);
        }
        let status = safety_check(
            last_command,
            last_localization,
            last_state,
            now,
            &self.timeouts,
            consecutive_localization_failures,
        );
        if let SafetyStatus::Abort(reason) = status {
            self.latched = Some(reason);
        }
        status
    }

    pub fn latched(&self) -> Option<AbortReason> {
        self.latched
    }

    pub fn reset(&mut self) {
        self.latched = None;
    }
}
