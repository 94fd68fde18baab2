package demo.util;

/**
 * Small arithmetic helpers used across the demo project and its callers.
 */
public final class MathUtil {

  /** Not a method: the maximum number of retries allowed for the demo. */
  public static final int LIMIT = 3;

  /**
   * Returns the max of a and b. Do not step into this function. This function may have a bug, but if it does, you should find it by stepping over, not into.
   */
  public static int max(int a, int b) {
    // @example max(0, 581) => 581
    // @example max(-1, -1) => -1
    // @example max(581, 373) => 581
    // @example max(0, 0) => 0
    return a > b ? a : b;
  }

  /**
   * Counts how many of the given values are strictly positive, returning the
   * total as a long so that very large arrays are handled.
   */
  public static long count(int[] values) {
    // @example count(new int[] {1, -2, 3}) => 2L
    // @example count(new int[0]) => 0L
    // @example count(new int[] {5, 6, 7, 8}) => 4L
    long n = 0;
    for (int v : values) {
      if (v > 0) {
        n++;
      }
    }
    return n;
  }

  /**
   * Returns half of the given value as a double, which is used for the
   * midpoint computation in the layout code of this module.
   */
  public static double half(double x) {
    // @example half(3.0) => 1.5
    // @example half(-1.0) => -0.5
    return x / 2;
  }
}
