#pragma once

// Umbrella header for the whole toolkit.

#include "skna/checkpoint.hpp"
#include "skna/classify.hpp"
#include "skna/container.hpp"
#include "skna/denoiser.hpp"
#include "skna/dsp.hpp"
#include "skna/error.hpp"
#include "skna/experiment.hpp"
#include "skna/features.hpp"
#include "skna/nn.hpp"
#include "skna/noise_mix.hpp"
#include "skna/random.hpp"
#include "skna/report.hpp"
#include "skna/signal.hpp"
#include "skna/stats.hpp"
#include "skna/synth.hpp"
