#pragma once

namespace terraseg {

// Worker cap for all OpenMP regions. Reads TERRASEG_THREADS once; values < 1
// or unset fall back to the OpenMP default.
int thread_count();

// Test hook: override the cap for the current process (0 = re-read env).
void set_thread_count(int n);

} // namespace terraseg
