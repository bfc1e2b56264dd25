#pragma once

#include <doctest.h>

#include "xclr/error.hpp"

// Runs f and returns the code of the xclr::Error it throws.
template <typename F>
xclr::Errc code_of(F&& f) {
  try {
    f();
  } catch (const xclr::Error& e) {
    return e.code();
  }
  FAIL("expected an xclr::Error");
  return xclr::Errc::InvalidArgument;
}
